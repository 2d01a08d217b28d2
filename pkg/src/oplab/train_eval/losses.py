"""Training objectives over ``(B, T, 4)`` box sequences."""
from __future__ import annotations

import logging

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor

log = logging.getLogger(__name__)


def localization_loss(pred: Tensor, gt: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean absolute coordinate error over the frames where ``mask`` is set."""
    pred = ad.as_tensor(pred)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ad.ShapeError(f"prediction {pred.shape} and target {gt.shape} differ")
    if mask is None:
        return ad.mean(ad.abs_(pred - gt))
    mask = np.asarray(mask, dtype=np.float64)
    n = mask.sum()
    if n == 0:
        log.warning("localization loss over an empty mask")
        return ad.mul(ad.sum_(pred), 0.0)
    # masked coordinates are zeroed on both sides so hidden targets never enter
    m = mask[..., None]
    diff = ad.abs_(pred * m - gt * m)
    return ad.mul(ad.sum_(diff), 1.0 / (4.0 * n))


def consistency_loss(pred: Tensor) -> Tensor:
    """``(1/n) sum_{t=1}^{n-1} ||b_t - b_{t-1}||^2`` with ``n`` frames, averaged over the batch."""
    pred = ad.as_tensor(pred)
    if pred.ndim == 2:
        pred = ad.reshape(pred, (1,) + pred.shape)
    B, n = pred.shape[:2]
    if n < 2:
        return ad.mul(ad.sum_(pred), 0.0)
    step = pred[:, 1:] - pred[:, :-1]
    return ad.mul(ad.sum_(ad.square(step)), 1.0 / (n * B))


def combined_loss(pred: Tensor, gt: np.ndarray, mask: np.ndarray | None,
                  alpha: float, beta: float) -> Tensor:
    loss = ad.mul(localization_loss(pred, gt, mask), alpha)
    if beta:
        loss = loss + ad.mul(consistency_loss(pred), beta)
    return loss
