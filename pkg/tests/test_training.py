import math
import warnings

import numpy as np
import pytest

from conftest import random_instance, rel_err
from eoslab import datagen, model, training
from eoslab.model import Dataset, ModelParams, ReceptiveFields
from eoslab.rng import RngStream
from eoslab.training import TrainConfig


def small_problem(seed=0, d=8, m=4, n=24):
    f = ReceptiveFields.disjoint(d, m)
    teacher = datagen.sample_teacher(f, 4, RngStream(seed).child("teacher"))
    data = datagen.make_regression_dataset(teacher, f, n, 0.5, RngStream(seed))
    return f, data


@pytest.mark.parametrize("kw", [dict(eta=0.0), dict(eta=2.0), dict(epochs=0), dict(K=-1),
                                dict(arch="cnn"), dict(sharpness_every=-1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_shared_kernel_matches_model_gradient():
    p, f, ds = random_instance(4, d=9, m=3, K=5, n=6)
    ker = training.SharedKernel(f.extract(ds.X), ds.y, p.K)
    L, g = ker.loss_grad(p.flatten())
    assert L == pytest.approx(model.loss(p, f, ds), rel=1e-13)
    assert rel_err(g, model.gradient(p, f, ds)) < 1e-13
    assert np.allclose(ker.outputs(p.flatten()), model.predict(p, f, ds.X), rtol=1e-13)


def test_gd_step_is_plain_update():
    f, data = small_problem()
    cfg = TrainConfig(eta=0.1, epochs=1, K=6, sharpness_every=0, certificate=False)
    p0 = model.init_params(6, f.m, RngStream(0).child("init"))
    res = training.gd_train(f, data.train, cfg)
    want = p0.flatten() - 0.1 * model.gradient(p0, f, data.train)
    assert np.allclose(res.params.flatten(), want, rtol=1e-14, atol=1e-15)


def test_training_telemetry_schedule_and_certificate():
    f, data = small_problem()
    cfg = TrainConfig(eta=0.2, epochs=250, K=8, sharpness_every=100, sharpness_tol=1e-9)
    res = training.gd_train(f, data.train, cfg)
    epochs = [r["epoch"] for r in res.record.rows]
    assert epochs == [0, 100, 200, 250]
    losses = res.record.column("loss")
    assert losses[-1] < losses[0]
    for r in res.record.rows:
        assert r["risk"] == 2 * r["loss"]
        assert r["cert_lhs"] <= r["cert_rhs"] + 1e-8 * (1 + abs(r["cert_rhs"]))
        assert r["beos"] == int(r["sharpness"] <= 2 / cfg.eta)


def test_telemetry_sharpness_matches_cold_solve():
    f, data = small_problem(1)
    cfg = TrainConfig(eta=0.2, epochs=60, K=6, sharpness_every=30, sharpness_tol=1e-12,
                      sharpness_max_iter=20000)
    res = training.gd_train(f, data.train, cfg)
    cold = model.sharpness(res.params, f, data.train, tol=1e-12, max_iter=20000)
    assert res.record.rows[-1]["sharpness"] == pytest.approx(cold, rel=1e-6)


def test_fcn_uses_full_field():
    f, data = small_problem()
    res = training.gd_train(None, data.train, TrainConfig(arch="fcn", epochs=5, K=4, sharpness_every=0))
    assert res.fields == ReceptiveFields.full(f.d)
    with pytest.raises(ValueError):
        training.gd_train(None, data.train, TrainConfig(epochs=5, K=4))


class Quadratic:
    """L = a theta^2 / 2: GD multiplies theta by (1 - eta a) each step."""

    def __init__(self, a):
        self.a = a
        self.y = np.zeros(1)

    def loss_grad(self, theta):
        return 0.5 * self.a * float(theta @ theta), self.a * theta

    def outputs(self, theta):
        return theta.copy()


def test_divergence_detected():
    cfg = TrainConfig(eta=1.0, epochs=500, K=1, sharpness_every=0, certificate=False)
    rec = training.run_gd(Quadratic(3.0), np.ones(1), cfg,
                          telemetry=lambda e, L, th: {"epoch": e, "loss": L})
    assert rec.diverged
    assert "exceeds" in rec.diagnostic
    assert math.isnan(rec.rows[-1]["sharpness"])
    # |1 - eta a| = 2 so the loss passes 1e12 after about 20 steps
    assert rec.rows[-1]["epoch"] < 30
    stable = training.run_gd(Quadratic(1.5), np.ones(1), cfg)
    assert not stable.diverged


def test_training_is_deterministic(tmp_path):
    f, data = small_problem(2)
    cfg = TrainConfig(eta=0.2, epochs=120, K=8, sharpness_every=40, eval_every=20)
    a = training.gd_train(f, data.train, cfg, test=data.test)
    b = training.gd_train(f, data.train, cfg, test=data.test)
    pa = a.record.to_csv(tmp_path / "a.csv").read_bytes()
    pb = b.record.to_csv(tmp_path / "b.csv").read_bytes()
    assert pa == pb
    ca = a.record.curve_to_csv(tmp_path / "ca.csv").read_text().splitlines()
    assert ca[0] == "epoch,train_risk,test_risk" and len(ca) == 1 + 7


def test_late_sharpness_window():
    rec = training.TrajectoryRecord(rows=[{"sharpness": float(i)} for i in range(10)])
    assert rec.late_sharpness(0.2).tolist() == [8.0, 9.0]
    assert rec.late_sharpness(0.01).tolist() == [9.0]


def test_gap_estimate_identity():
    f, data = small_problem(3, n=40)
    p = model.init_params(5, f.m, 1)
    g = training.gap_estimate(p, f, data.train, data.test, 0.5)
    assert g.sigma2 == 0.25
    assert g.signed == pytest.approx(g.excess + 0.25 - g.train_risk)
    assert g.gap == abs(g.signed)
    assert g.excess == pytest.approx(np.mean((model.predict(p, f, data.test.X) - data.test.f_true) ** 2))
    with pytest.raises(ValueError):
        training.estimate_excess(p, f, Dataset(data.test.X, data.test.y))


def test_slope_fit_exact_power_law():
    pairs = [(n, 3.0 * n ** -0.5) for n in (100, 200, 400, 800)]
    fit = training.slope_fit(pairs)
    assert fit.slope == pytest.approx(-0.5, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)


def test_slope_fit_drops_and_refuses():
    with pytest.warns(UserWarning, match="dropped 1"):
        fit = training.slope_fit([(10, 1.0), (20, 0.5), (40, -1.0)])
    assert fit.dropped == 1 and fit.n_points == 2
    with pytest.raises(ValueError, match="two distinct n"):
        training.slope_fit([(10, 1.0), (10, 2.0)])
