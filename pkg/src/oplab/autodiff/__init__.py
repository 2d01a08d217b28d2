"""Minimal reverse-mode differentiation kernel and Adam."""
from .tensor import (ShapeError, Tensor, abs_, add, as_tensor, backward, concat, matmul,
                     mean, mul, neg, relu, reshape, sigmoid, slice_, softmax, softplus,
                     square, stack, sub, sum_, tanh)
from .nn import (ParamStore, init_linear, init_lstm, linear, load_checkpoint, lstm_cell,
                 lstm_sequence, run_lstm, run_lstm_cells, save_checkpoint)
from .optim import AdamState, adam_step
from .gradcheck import finite_diff_check, numeric_grad, relative_error
