import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oplab import autodiff as ad
from oplab.autodiff import ShapeError, Tensor
from oplab.models import (Model, ModelConfig, ModelVariant, box_head, forward,
                          heuristic_baseline, init_params, reduce_by_attention,
                          static_last_known, who_to_track)

SMALL = dict(slots=4, hidden=6, baseline_hidden=7, embed=3, mlp_hidden=5)


def _obs(seed, B=2, T=5, K=4):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(0, 0.7, size=(B, T, K, 2))
    obs = np.concatenate([lo, lo + rng.uniform(0.02, 0.2, size=(B, T, K, 2)),
                          np.ones((B, T, K, 1))], axis=-1)
    hidden = rng.uniform(size=(B, T, K)) < 0.3
    obs[hidden] = 0.0
    return obs


def test_variant_parse():
    assert ModelVariant.parse("opnet") is ModelVariant.OPNET
    assert ModelVariant.parse("LSTM_MLP") is ModelVariant.OPNET_MLP
    assert ModelVariant.parse("static-last-known") is ModelVariant.STATIC
    with pytest.raises(ValueError):
        ModelVariant.parse("transformer")


@pytest.mark.parametrize("variant", list(ModelVariant))
def test_output_shapes_and_valid_boxes(variant):
    obs = _obs(0)
    boxes, attn = Model(ModelConfig(variant, **SMALL)).predict(obs)
    assert boxes.shape == (2, 5, 4)
    assert (boxes[..., 0] <= boxes[..., 2]).all() and (boxes[..., 1] <= boxes[..., 3]).all()
    if variant in (ModelVariant.OPNET, ModelVariant.OPNET_MLP):
        assert attn.shape == (2, 5, 4)
    else:
        assert attn is None


def test_attention_is_a_distribution():
    params = init_params(ModelConfig(ModelVariant.OPNET, **SMALL))
    attn = who_to_track(_obs(1), params).data
    assert (attn >= 0).all()
    np.testing.assert_allclose(attn.sum(-1), 1.0, atol=1e-9)


def test_saturated_logit_dominates():
    params = init_params(ModelConfig(ModelVariant.OPNET, **SMALL))
    params["who.proj.W"].data[:] = 0.0
    params["who.proj.b"].data[:] = [0.0, 30.0, 0.0, 0.0]
    attn = who_to_track(_obs(2), params).data
    assert (attn[..., 1] > 0.99).all()


def test_mlp_and_lstm_variants_share_who_to_track():
    a = init_params(ModelConfig(ModelVariant.OPNET, seed=3, **SMALL))
    b = init_params(ModelConfig(ModelVariant.OPNET_MLP, seed=3, **SMALL))
    obs = _obs(3)
    _, att_a = forward(ModelVariant.OPNET, obs, a)
    _, att_b = forward(ModelVariant.OPNET_MLP, obs, b)
    np.testing.assert_array_equal(att_a.data, att_b.data)


def test_reduce_examples():
    rows = np.array([[0.1, 0.2, 0.3, 0.4, 1.0], [0.5, 0.5, 0.7, 0.8, 1.0], [0, 0, 0, 0, 0]])
    np.testing.assert_array_equal(reduce_by_attention(rows, np.array([0.0, 1.0, 0.0])).data,
                                  rows[1])
    twin = np.stack([rows[0], rows[0]])
    np.testing.assert_allclose(reduce_by_attention(twin, np.array([0.5, 0.5])).data, rows[0])
    with pytest.raises(ValueError):
        reduce_by_attention(rows, np.array([1.2, -0.2, 0.0]))
    with pytest.raises(ShapeError):
        reduce_by_attention(rows, np.array([0.5, 0.5]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 5), elements=st.floats(0, 1)),
       arrays(np.float64, (5,), elements=st.floats(0.01, 1)),
       st.permutations(range(5)))
def test_reduce_is_permutation_equivariant(rows, w, perm):
    w = w / w.sum()
    perm = list(perm)
    a = reduce_by_attention(rows, w).data
    b = reduce_by_attention(rows[perm], w[perm]).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_box_head_is_valid_for_any_input():
    raw = Tensor(np.random.default_rng(4).normal(0, 10, size=(50, 4)))
    b = box_head(raw).data
    assert (b[:, 0] <= b[:, 2]).all() and (b[:, 1] <= b[:, 3]).all()


def test_wrong_slot_count_is_rejected():
    params = init_params(ModelConfig(ModelVariant.OPNET, **SMALL))
    with pytest.raises(ShapeError):
        forward(ModelVariant.OPNET, _obs(5, K=3), params)


def test_params_are_finite_and_named():
    p = init_params(ModelConfig(ModelVariant.NONLINEAR_LSTM, **SMALL))
    assert set(p) == {"embed.W", "embed.b", "base.lstm.W", "base.lstm.b",
                      "base.proj.W", "base.proj.b"}
    assert all(np.isfinite(t.data).all() for t in p.values())
    assert p["base.lstm.W"].shape == (3 * 4 + 7, 4 * 7)


def test_model_save_load(tmp_path):
    m = Model(ModelConfig(ModelVariant.OPNET, seed=9, **SMALL))
    m.save(tmp_path / "m.json")
    m2 = Model.load(tmp_path / "m.json")
    assert m2.config == m.config
    np.testing.assert_array_equal(m.predict(_obs(6))[0], m2.predict(_obs(6))[0])


def test_predict_matches_graph_forward():
    m = Model(ModelConfig(ModelVariant.OPNET, **SMALL))
    obs = _obs(7, B=5)
    boxes, _ = m(obs)
    np.testing.assert_array_equal(m.predict(obs, batch_size=2)[0], boxes.data)


# ---------------------------------------------------------------------------
# programmed baselines
# ---------------------------------------------------------------------------

def _row(x, y, w=0.05, h=0.05):
    return [x, y, x + w, y + h, 1.0]


def test_heuristic_copies_visible_target():
    obs = _obs(8, B=1, K=3)[0]
    obs[:, 0] = [_row(0.1 + 0.02 * t, 0.2) for t in range(5)]
    np.testing.assert_array_equal(heuristic_baseline(obs), obs[:, 0, :4])


def test_heuristic_adopts_nearest_object():
    T = 4
    obs = np.zeros((T, 3, 5))
    obs[0, 0] = _row(0.40, 0.40)
    obs[:, 1] = _row(0.40, 0.42, 0.1, 0.1)    # cone right next to the target
    obs[:, 2] = _row(0.80, 0.80)              # distractor far away
    obs[2:, 1, 0] += 0.2                      # the cone then moves
    obs[2:, 1, 2] += 0.2
    out = heuristic_baseline(obs)
    cone_c = np.array([0.5 * (obs[3, 1, 0] + obs[3, 1, 2]), 0.5 * (obs[3, 1, 1] + obs[3, 1, 3])])
    np.testing.assert_allclose([(out[3, 0] + out[3, 2]) / 2, (out[3, 1] + out[3, 3]) / 2], cone_c)
    # remembered size
    np.testing.assert_allclose(out[3, 2] - out[3, 0], 0.05)


def test_heuristic_tie_breaks_to_lower_slot():
    obs = np.zeros((2, 3, 5))
    obs[0, 0] = _row(0.475, 0.475)
    obs[1, 1] = _row(0.275, 0.475)            # 0.2 to the left
    obs[1, 2] = _row(0.675, 0.475)            # 0.2 to the right
    out = heuristic_baseline(obs)
    assert (out[1, 0] + out[1, 2]) / 2 == pytest.approx(0.3)


def test_heuristic_holds_when_nothing_visible():
    obs = np.zeros((3, 2, 5))
    obs[0, 0] = _row(0.3, 0.3)
    out = heuristic_baseline(obs)
    np.testing.assert_array_equal(out[2], obs[0, 0, :4])


def test_heuristic_reverts_on_reappearance():
    obs = np.zeros((3, 2, 5))
    obs[0, 0] = _row(0.3, 0.3)
    obs[:, 1] = _row(0.32, 0.3)
    obs[2, 0] = _row(0.6, 0.6)
    np.testing.assert_array_equal(heuristic_baseline(obs)[2], obs[2, 0, :4])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_heuristic_deterministic_and_length_preserving(seed):
    obs = _obs(seed, B=1, T=9)[0]
    obs[0, 0] = _row(0.2, 0.2)
    a, b = heuristic_baseline(obs), heuristic_baseline(obs.copy())
    np.testing.assert_array_equal(a, b)
    assert a.shape == (9, 4)


def test_static_last_known_freezes():
    obs = np.zeros((4, 2, 5))
    obs[0, 0] = _row(0.1, 0.1)
    obs[1, 0] = _row(0.2, 0.1)
    out = static_last_known(obs)
    np.testing.assert_array_equal(out[3], obs[1, 0, :4])
