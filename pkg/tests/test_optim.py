import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dphtc import optim
from dphtc.data import synth_corpus
from dphtc.models import EncoderConfig, HtcModel
from dphtc.optim import (
    Adam, DivergenceError, DpConfig, StepRngs, TrainConfig, calibrate_clipping_norm, clip, clip_rows,
    lower_median, private_gradient, train,
)
from dphtc.taxonomy import balanced_tree
from dphtc.tensor import Graph, backward


def setup(n=64, seed=0, kind="bow", vocab=300):
    tax = balanced_tree([2, 3])
    records = synth_corpus(tax, n + 32, vocab, seed=seed)
    model = HtcModel(EncoderConfig(kind, embed_dim=8, filters=4), tax, vocab, levels=2, seed=seed)
    return model, records[:n], records[n:]


# -- clipping and medians --------------------------------------------------


def test_clip_examples():
    np.testing.assert_allclose(clip(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])
    g = np.array([0.3, 0.4])
    assert clip(g, 1.0) is g
    np.testing.assert_array_equal(clip(np.zeros(3), 1.0), np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 10.0))
def test_clip_rows_bounds_norms(seed, c):
    rows = np.random.default_rng(seed).normal(size=(6, 5)) * 10
    clipped = clip_rows(rows, c)
    norms = np.linalg.norm(clipped, axis=1)
    assert np.all(norms <= c + 1e-9)
    for r, cr in zip(rows, clipped):
        np.testing.assert_allclose(cr, clip(r, c), rtol=1e-12)


def test_lower_median_examples():
    assert lower_median([1, 2, 9]) == 2
    assert lower_median([1, 3]) == 1
    assert lower_median([4.5] * 6) == 4.5
    with pytest.raises(ValueError):
        lower_median([])


# -- Adam ------------------------------------------------------------------


def test_adam_matches_hand_computation():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    adam = Adam(2, lr, b1, b2, eps)
    p = np.array([1.0, -2.0])
    g1, g2 = np.array([0.5, -1.0]), np.array([0.1, 0.3])
    p1 = adam.step(p, g1)
    # first step: m_hat = g, v_hat = g^2
    np.testing.assert_allclose(p1, p - lr * g1 / (np.abs(g1) + eps))
    p2 = adam.step(p1, g2)
    m = (1 - b1) * (b1 * g1 + g2)
    v = (1 - b2) * (b2 * g1**2 + g2**2)
    expect = p1 - lr * (m / (1 - b1**2)) / (np.sqrt(v / (1 - b2**2)) + eps)
    np.testing.assert_allclose(p2, expect, rtol=1e-13)


# -- DP gradient -----------------------------------------------------------


def oracle_private_gradient(model, batch, z, c, micro, seed):
    """Independent loop: per-record backward, microbatch means, clip, sum, one noise draw."""
    rows = []
    for r in batch:
        g = Graph()
        backward(g, model.loss(g, [r]), model.store)
        rows.append(model.store.flat_grads())
    rows = np.array(rows).reshape(len(batch) // micro, micro, -1).mean(axis=1)
    total = np.zeros(rows.shape[1])
    for row in rows:
        n = np.linalg.norm(row)
        total += row * min(1.0, c / n)
    noise_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[2])
    total += noise_rng.normal(0.0, z * c, size=total.shape)
    return total / len(rows)


@pytest.mark.parametrize("micro", [1, 2, 4])
def test_private_gradient_matches_oracle(micro):
    model, records, _ = setup()
    batch = records[:8]
    got = private_gradient(model, batch, DpConfig(1.3, 0.05, micro), StepRngs.from_seed(5))
    want = oracle_private_gradient(model, batch, 1.3, 0.05, micro, 5)
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)


def test_noise_has_stated_scale():
    # embedding 2000 x 50 alone gives > 1e5 coordinates
    tax = balanced_tree([2, 2])
    records = synth_corpus(tax, 4, 2000, seed=0)
    model = HtcModel(EncoderConfig("bow"), tax, 2000, levels=2, seed=0)
    assert model.store.size > 100_000
    seen = {}
    grad = private_gradient(model, records, DpConfig(1.0, 1.0, 1), StepRngs.from_seed(3),
                            hook=lambda m: seen.setdefault("sum", m.sum(axis=0)))
    noise = grad * len(records) - seen["sum"]
    assert abs(noise.std() - 1.0) < 0.05
    again = private_gradient(model, records, DpConfig(1.0, 1.0, 1), StepRngs.from_seed(3))
    np.testing.assert_array_equal(grad, again)


def test_identity_config_equals_plain_adam():
    model_a, records, val = setup(seed=1, kind="cnn")
    model_b, _, _ = setup(seed=1, kind="cnn")
    cfg = TrainConfig(batch_size=8, max_epochs=2, patience=None)
    train(model_a, records, val, cfg, seed=4)
    train(model_b, records, val, cfg, dp=DpConfig(0.0, math.inf, 1), seed=4)
    np.testing.assert_array_equal(model_a.store.flat_params(), model_b.store.flat_params())


def test_zero_noise_with_inactive_clipping_equals_plain_adam():
    model_a, records, val = setup(seed=2)
    model_b, _, _ = setup(seed=2)
    cfg = TrainConfig(batch_size=8, max_epochs=1, patience=None)
    train(model_a, records, val, cfg, seed=0)
    train(model_b, records, val, cfg, dp=DpConfig(0.0, 1e6, 1), seed=0)
    np.testing.assert_allclose(model_a.store.flat_params(), model_b.store.flat_params(), atol=1e-9)


def test_dp_config_validation():
    with pytest.raises(ValueError):
        DpConfig(-1.0, 1.0)
    with pytest.raises(ValueError):
        DpConfig(1.0, 0.0)
    with pytest.raises(ValueError, match="finite"):
        DpConfig(1.0, math.inf)
    assert DpConfig(2.0, 0.5).sigma == 1.0


def test_clipping_hook_bounds_every_contribution():
    model, records, val = setup()
    norms = []
    train(model, records, val, TrainConfig(batch_size=8, max_epochs=2, patience=None),
          dp=DpConfig(0.5, 0.01, 2), seed=1, hook=lambda m: norms.extend(np.linalg.norm(m, axis=1)))
    assert len(norms) == 2 * (64 // 8) * 4
    assert max(norms) <= 0.01 + 1e-9


# -- training loop ---------------------------------------------------------


def test_steps_drop_the_short_tail():
    model, records, val = setup(n=70)
    report = train(model, records, val, TrainConfig(batch_size=32, max_epochs=1, patience=None))
    assert report.steps == 70 // 32


def test_overfit_mode_runs_every_epoch():
    model, records, val = setup(n=32)
    report = train(model, records, val, TrainConfig(batch_size=16, max_epochs=50, patience=None))
    assert report.epochs == 50 and not report.stopped_early and report.best_epoch == 50


def test_patience_rule(monkeypatch):
    model, records, val = setup(n=32)
    losses = iter([(0.0, 0.0), (5.0, 0.0), (0.0, 0.0), (4.0, 0.0)] + [(0.0, 0.0), (6.0, 0.0)] * 10)
    snapshots = {}
    monkeypatch.setattr(optim, "evaluate_split", lambda m, r: next(losses))
    report = train(model, records, val, TrainConfig(batch_size=16, max_epochs=30, patience=3),
                   step_callback=lambda s, m: snapshots.__setitem__(s, m.store.flat_params()))
    assert report.val_loss == [5.0, 4.0, 6.0, 6.0, 6.0]
    assert report.epochs == 5 and report.stopped_early and report.best_epoch == 2
    np.testing.assert_array_equal(model.store.flat_params(), snapshots[4])  # end of epoch 2


def test_divergence_is_reported():
    model, records, val = setup(n=32)
    model.store.params["head1.b"][0] = np.nan
    with pytest.raises(DivergenceError):
        train(model, records, val, TrainConfig(batch_size=16, max_epochs=1))
    model, records, val = setup(n=32)
    model.store.params["head1.b"][0] = np.nan
    with pytest.raises(DivergenceError):
        train(model, records, val, TrainConfig(batch_size=16, max_epochs=1), dp=DpConfig(1.0, 1.0))


def test_training_errors():
    model, records, val = setup(n=32)
    with pytest.raises(ValueError, match="non-empty"):
        train(model, [], val, TrainConfig())
    with pytest.raises(ValueError, match="microbatch"):
        train(model, records, val, TrainConfig(batch_size=6), dp=DpConfig(1.0, 1.0, 4))


def test_same_seed_same_trajectory():
    runs = []
    for _ in range(2):
        model, records, val = setup(kind="cnn")
        train(model, records, val, TrainConfig(batch_size=8, max_epochs=1), dp=DpConfig(1.0, 0.1), seed=9)
        runs.append(model.store.flat_params())
    np.testing.assert_array_equal(*runs)


def test_calibration_is_lower_median_of_step_norms():
    model, records, val = setup()
    c, report = calibrate_clipping_norm(lambda: setup()[0], records, val,
                                        TrainConfig(batch_size=8, max_epochs=2, patience=None))
    assert len(report.grad_norms) == report.steps == 16
    assert c == sorted(report.grad_norms)[7]


def test_report_json_and_grad_norm_csv(tmp_path):
    model, records, val = setup()
    report = train(model, records, val, TrainConfig(batch_size=16, max_epochs=1), dp=DpConfig(0.0, math.inf))
    assert '"clip_norm": "inf"' in report.to_json()
    report.grad_norms = [1.5, 2.5]
    report.write_grad_norms(tmp_path / "g.csv")
    assert (tmp_path / "g.csv").read_text().splitlines() == ["step,norm", "1,1.5", "2,2.5"]
