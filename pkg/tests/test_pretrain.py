import numpy as np
import pytest

from ncae.errors import ConfigError
from ncae.model import Batch, ModelParams, TrainConfig, explicit_loss, new_optimizer, sparse_forward, train_epoch
from ncae.pretrain import (
    PretrainPlan,
    dr_backward,
    dr_forward,
    dr_loss,
    fine_tune,
    pretrain,
    pretrain_dr,
    pretrain_sr,
    pretrain_v,
)
from ncae.synthetic import low_rank_explicit

from oracles import central_differences, relative_error

CONFIG = TrainConfig(q=0.5, learning_rate=0.01, batch_size=4, weight_decay=2e-4)


def _setup(dims=(15, 8, 8, 15), seed=0):
    m, _ = low_rank_explicit(seed=seed)
    rng = np.random.default_rng(seed)
    return m, ModelParams.init(list(dims), rng), rng


def _train_loss(params, m):
    trace = sparse_forward(params, Batch.uncorrupted(m.to_csr()), "explicit")
    return float(explicit_loss(trace).mean())


def test_sr_zero_epochs_keeps_first_layer():
    m, p, rng = _setup()
    before = p.copy()
    plan = PretrainPlan(sr_epochs=0)
    pretrain_sr(p, m, CONFIG, plan, rng)
    assert np.array_equal(p.weights[0], before.weights[0])
    assert plan.decoders["sr"][0].shape == (15, 8)


def test_sr_trains_only_first_layer_with_full_width_decoder():
    m, p, rng = _setup()
    before = p.copy()
    plan = PretrainPlan(sr_epochs=3)
    pretrain_sr(p, m, CONFIG, plan, rng)
    assert not np.array_equal(p.weights[0], before.weights[0])
    for k in (1, 2):
        assert np.array_equal(p.weights[k], before.weights[k])
        assert np.array_equal(p.biases[k], before.biases[k])
    w, b = plan.decoders["sr"]
    assert w.shape == (15, 8) and b.shape == (15,)


def test_sr_loss_moving_average_decreases():
    m, p, rng = _setup(seed=1)
    losses = []
    pretrain_sr(p, m, CONFIG, PretrainPlan(sr_epochs=25), rng, on_epoch=lambda r: losses.append(r["loss"]))
    avg = np.convolve(losses, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(avg) <= 0)


def test_dr_noop_for_two_layers():
    m, p, rng = _setup(dims=(15, 8, 15))
    before = p.copy()
    plan = PretrainPlan()
    pretrain_dr(p, m, CONFIG, plan, rng)
    assert plan.decoders == {}
    for a, b in zip(p.arrays(), before.arrays()):
        assert np.array_equal(a, b)


def test_dr_trains_only_middle_layer():
    m, p, rng = _setup(dims=(15, 8, 6, 5, 15))
    before = p.copy()
    plan = PretrainPlan(dr_epochs=2)
    stages = []
    pretrain_dr(p, m, CONFIG, plan, rng, on_epoch=lambda r: stages.append(r["stage"]))
    assert stages == ["dr1", "dr1", "dr2", "dr2"]
    assert plan.decoders["dr1"][0].shape == (8, 6) and plan.decoders["dr2"][0].shape == (6, 5)
    for k in (0, 3):
        assert np.array_equal(p.weights[k], before.weights[k])
    for k in (1, 2):
        assert not np.array_equal(p.weights[k], before.weights[k])


def test_dr_loss_brute_force():
    rng = np.random.default_rng(0)
    h = np.tanh(rng.normal(size=(3, 4)))
    r = np.tanh(rng.normal(size=(3, 4)))
    brute = 0.0
    for i in range(3):
        for k in range(4):
            brute += (r[i, k] - h[i, k]) ** 2
    assert abs(dr_loss(h, r) - brute / 12) < 1e-12


def test_dr_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    ae = ModelParams([rng.normal(size=(3, 4)), rng.normal(size=(4, 3))], [rng.normal(size=3), rng.normal(size=4)])
    h = np.tanh(rng.normal(size=(5, 4)))
    lam = 0.03

    def f():
        _, r = dr_forward(ae, h)
        return dr_loss(h, r) + 0.5 * lam * sum(float(np.sum(a * a)) for a in ae.arrays())

    z, r = dr_forward(ae, h)
    analytic = dr_backward(ae, h, z, r, lam)
    numeric = central_differences(f, ae.arrays())
    assert max(relative_error(a, n) for a, n in zip(analytic, numeric)) < 1e-6


def test_dr_perfect_reconstruction_leaves_regulariser():
    rng = np.random.default_rng(2)
    ae = ModelParams([rng.normal(size=(3, 4)), rng.normal(size=(4, 3))], [rng.normal(size=3), rng.normal(size=4)])
    x = np.tanh(rng.normal(size=(5, 4)))
    z, r = dr_forward(ae, x)
    grads = dr_backward(ae, r, z, r, 0.1)  # target equals reconstruction
    for g, p in zip(grads, ae.arrays()):
        assert np.allclose(g, 0.1 * p, rtol=0, atol=0)


def test_v_stage_freezes_lower_layers_and_helps():
    m, p, rng = _setup()
    before = p.copy()
    loss0 = _train_loss(p, m)
    pretrain_v(p, m, CONFIG, PretrainPlan(v_epochs=10), rng)
    for k in (0, 1):
        assert np.array_equal(p.weights[k], before.weights[k])
        assert np.array_equal(p.biases[k], before.biases[k])
    assert not np.array_equal(p.weights[2], before.weights[2])
    assert _train_loss(p, m) <= loss0


def test_zero_output_layer_predicts_midpoint():
    m, p, _ = _setup()
    p.weights[-1][:] = 0.0
    trace = sparse_forward(p, Batch.uncorrupted(m.to_csr()), "explicit", dense=True)
    assert np.all(trace.predictions() == 2.75)


def test_pretrain_deterministic_and_stage_order():
    m, _, _ = _setup()

    def run():
        rng = np.random.default_rng(5)
        p = ModelParams.init([15, 8, 8, 15], rng)
        stages = []
        pretrain(p, m, CONFIG, PretrainPlan(2, 2, 2), rng, on_epoch=lambda r: stages.append(r["stage"]))
        return p, stages

    (a, sa), (b, sb) = run(), run()
    assert sa == ["sr", "sr", "dr1", "dr1", "v", "v"] and sa == sb
    for x, y in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)


def test_fine_tune_without_pretraining_is_plain_training():
    m, _, _ = _setup()

    rng = np.random.default_rng(3)
    a = ModelParams.init([15, 8, 15], rng)
    pretrain(a, m, CONFIG, PretrainPlan.disabled(), rng)
    records = []
    fine_tune(a, m, CONFIG, rng, on_epoch=records.append, validate=lambda p: {"valid": 1.0}, epochs=4)

    rng = np.random.default_rng(3)
    b = ModelParams.init([15, 8, 15], rng)
    opt = new_optimizer(b, CONFIG)
    losses = [train_epoch(b, m, CONFIG, rng, opt)[1] for _ in range(4)]

    for x, y in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)
    assert [r["loss"] for r in records] == losses
    assert records[0] == {"stage": "fine-tune", "epoch": 1, "loss": losses[0], "valid": 1.0}


def test_plan_rejects_negative_epochs():
    with pytest.raises(ConfigError):
        PretrainPlan(sr_epochs=-1)
