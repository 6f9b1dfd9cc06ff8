import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_instance, rel_err
from eoslab import model, stability
from eoslab.model import CheckpointError, Dataset, ModelParams, ReceptiveFields


def naive_forward(params, fields, x):
    # deliberately loop-based second implementation
    total = params.beta
    for k in range(params.K):
        acc = 0.0
        for j in range(fields.J):
            patch = [x[c] for c in fields.subsets[j]]
            pre = sum(params.w[k][c] * patch[c] for c in range(fields.m)) - params.b[k]
            acc += max(pre, 0.0)
        total += params.v[k] * acc / fields.J
    return total


def fd_gradient(params, fields, ds, h=1e-5):
    theta = params.flatten()
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        lp = model.loss(ModelParams.unflatten(theta + e, params.K, params.m), fields, ds)
        lm = model.loss(ModelParams.unflatten(theta - e, params.K, params.m), fields, ds)
        g[i] = (lp - lm) / (2 * h)
    return g


# ---- receptive fields and parameters


def test_disjoint_fields_layout():
    f = ReceptiveFields.disjoint(7, 3)
    assert (f.J, f.m) == (2, 3)
    assert f.subsets.tolist() == [[0, 1, 2], [3, 4, 5]]
    assert ReceptiveFields.full(10) == ReceptiveFields.disjoint(10, 10)


@pytest.mark.parametrize("subsets", [[[0, 0]], [[0, 5]], [[-1, 1]], []])
def test_bad_fields_rejected(subsets):
    with pytest.raises(ValueError):
        ReceptiveFields(4, np.array(subsets))


def test_extract_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        ReceptiveFields.disjoint(4, 2).extract(np.ones((3, 5)))


def test_params_validation():
    with pytest.raises(ValueError, match="inconsistent"):
        ModelParams(np.ones((2, 3)), np.zeros(3), np.zeros(2))
    with pytest.raises(ValueError, match="zero filter"):
        ModelParams(np.zeros((1, 2)), [0.0], [1.0])
    with pytest.raises(ValueError, match="finite"):
        ModelParams(np.ones((1, 2)), [np.nan], [1.0])


@given(st.integers(0, 6), st.integers(1, 5), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_flatten_roundtrip(K, m, seed):
    p = model.init_params(K, m, seed)
    q = ModelParams.unflatten(p.flatten(), K, m)
    assert np.array_equal(q.flatten(), p.flatten())
    assert p.flatten().shape == (model.param_count(K, m),)


def test_unflatten_wrong_length():
    with pytest.raises(ValueError):
        ModelParams.unflatten(np.zeros(5), 1, 2)


def test_dataset_bounds():
    ds = Dataset([[3.0, 4.0]], [-2.0])
    assert (ds.R, ds.D) == (5.0, 2.0)
    with pytest.raises(ValueError, match="exceeds R"):
        Dataset([[3.0, 4.0]], [0.0], R=1.0)
    with pytest.raises(ValueError, match="exceeds D"):
        Dataset([[0.0, 0.0]], [3.0], D=1.0)


# ---- forward and loss


def test_forward_hand_values():
    f = ReceptiveFields.full(2)
    p = ModelParams([[1.0, 0.0]], [0.0], [1.0], 0.0)
    assert model.forward(p, f, np.array([0.5, 0.0])) == 0.5
    assert model.forward(ModelParams.constant(3.0, 2), f, np.array([9.0, -1.0])) == 3.0
    f1 = ReceptiveFields.disjoint(2, 1)
    p1 = ModelParams([[1.0]], [0.0], [2.0], 0.0)
    assert model.forward(p1, f1, np.array([1.0, -1.0])) == 1.0


def test_forward_two_patch_example():
    # patches (1, 0) and (0.2, 3): pre-activations 0.5 and -0.3, mean relu 0.25
    f = ReceptiveFields.disjoint(4, 2)
    p = ModelParams([[1.0, 0.0]], [0.5], [2.0], 0.1)
    assert model.forward(p, f, np.array([1.0, 0.0, 0.2, 3.0])) == pytest.approx(0.6, abs=1e-15)


def test_forward_matches_naive_evaluator():
    gen = np.random.default_rng(3)
    for trial in range(20):
        d, m = int(gen.integers(2, 12)), 0
        m = int(gen.integers(1, d + 1))
        f = ReceptiveFields.disjoint(d, m)
        p = model.init_params(int(gen.integers(0, 6)), m, gen, beta=float(gen.standard_normal()))
        p.b[:] = 0.2 * gen.standard_normal(p.K)
        X = gen.standard_normal((4, d))
        got = model.predict(p, f, X)
        want = np.array([naive_forward(p, f, x) for x in X])
        assert np.allclose(got, want, rtol=1e-12, atol=1e-14)


def test_loss_and_plugin_risk():
    f = ReceptiveFields.full(1)
    p = ModelParams.constant(0.0, 1)
    ds = Dataset([[0.0]], [2.0])
    assert model.loss(p, f, ds) == 2.0
    assert model.plugin_risk(p, f, ds) == 4.0


def test_loss_zero_at_interpolant():
    from eoslab import interpolator
    from eoslab.rng import RngStream

    ds, f = interpolator.random_anchor_dataset(12, 3, 2, RngStream(1), 0.0)
    p = interpolator.construct(ds, f)
    assert model.loss(p, f, ds) < 1e-28


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
@settings(max_examples=30, deadline=None)
def test_neuron_rescaling_preserves_function(seed, c):
    p, f, ds = random_instance(seed)
    q = p.rescaled(c)
    probe = np.random.default_rng(seed).standard_normal((50, f.d))
    a, b = model.predict(p, f, probe), model.predict(q, f, probe)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


# ---- gates


def test_gates_extremes_and_ties():
    f = ReceptiveFields.disjoint(2, 1)
    ds = Dataset([[1.0, -1.0]], [0.0])
    p = ModelParams([[1.0], [1.0], [1.0]], [5.0, -5.0, 1.0], [1.0, 1.0, 1.0])
    G = model.gates(p, f, ds)
    assert G.shape == (2, 3)
    assert G[:, 0].tolist() == [0, 0]
    assert G[:, 1].tolist() == [1, 1]
    # exact tie w.p = b is off
    assert G[:, 2].tolist() == [0, 0]
    p0 = ModelParams([[1.0]], [0.0], [2.0])
    assert model.gates(p0, f, ds)[:, 0].tolist() == [1, 0]


def test_gates_width_zero():
    f = ReceptiveFields.disjoint(4, 2)
    ds = Dataset(np.ones((3, 4)), np.zeros(3))
    assert model.gates(ModelParams.constant(1.0, 2), f, ds).shape == (6, 0)


# ---- gradients


def test_gradient_beta_only():
    f = ReceptiveFields.full(2)
    ds = Dataset([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]], [1.0, 2.0, -0.5])
    g = model.gradient(ModelParams.constant(0.7, 2), f, ds)
    assert g.shape == (1,)
    assert g[0] == pytest.approx(np.mean(0.7 - ds.y), rel=1e-14)


def test_gradient_dead_neurons():
    p, f, ds = random_instance(5, K=3)
    p.b[:] = 100.0
    g = model.gradient(p, f, ds)
    assert not g[:-1].any()


@pytest.mark.parametrize("seed", range(12))
def test_gradient_matches_finite_differences(seed):
    p, f, ds = random_instance(seed, d=8, m=4, K=4, n=6)
    assert rel_err(model.gradient(p, f, ds), fd_gradient(p, f, ds)) < 1e-6


@pytest.mark.parametrize("seed", range(12))
def test_gradient_factorized_matches_w_block(seed):
    p, f, ds = random_instance(100 + seed, d=12, m=4, K=5, n=7)
    gw = model.gradient(p, f, ds)[: p.K * p.m].reshape(p.K, p.m)
    assert rel_err(model.gradient_factorized(p, f, ds), gw) < 1e-12


def test_gradient_factorized_degenerate_cases():
    p, f, ds = random_instance(7)
    ds0 = Dataset(ds.X, model.predict(p, f, ds.X))
    assert not model.gradient_factorized(p, f, ds0).any()
    p.b[:] = 50.0
    assert not model.gradient_factorized(p, f, ds).any()


# ---- Hessian


def test_hessian_beta_only():
    f = ReceptiveFields.full(2)
    ds = Dataset([[1.0, 0.0]], [3.0])
    p = ModelParams.constant(0.0, 2)
    assert model.dense_hessian(p, f, ds).tolist() == [[1.0]]
    assert model.hvp(p, f, ds, np.array([1.0])).tolist() == [1.0]
    assert model.sharpness(p, f, ds) == 1.0
    assert model.tangent_top_eig(p, f, ds) == 1.0


@pytest.mark.parametrize("seed", range(10))
def test_hvp_matches_dense(seed):
    p, f, ds = random_instance(200 + seed, d=6, m=3, K=4, n=8)
    H = model.dense_hessian(p, f, ds)
    assert np.allclose(H, H.T, rtol=0, atol=1e-12)
    gen = np.random.default_rng(seed)
    for _ in range(32):
        u = gen.standard_normal(p.size)
        assert rel_err(model.hvp(p, f, ds, u), H @ u) < 1e-10


@pytest.mark.parametrize("seed", range(6))
def test_hvp_matches_gradient_differences(seed):
    p, f, ds = random_instance(300 + seed, d=6, m=3, K=3, n=6)
    theta = p.flatten()
    u = np.random.default_rng(seed).standard_normal(p.size)
    h = 1e-5
    gp = model.gradient(ModelParams.unflatten(theta + h * u, p.K, p.m), f, ds)
    gm = model.gradient(ModelParams.unflatten(theta - h * u, p.K, p.m), f, ds)
    assert rel_err(model.hvp(p, f, ds, u), (gp - gm) / (2 * h)) < 1e-5


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_hvp_linear_and_symmetric(seed):
    p, f, ds = random_instance(seed, K=4)
    gen = np.random.default_rng(seed)
    a, b = gen.standard_normal(p.size), gen.standard_normal(p.size)
    ha, hb = model.hvp(p, f, ds, a), model.hvp(p, f, ds, b)
    assert abs(a @ hb - b @ ha) <= 1e-10 * (abs(a @ hb) + 1e-12)
    assert rel_err(model.hvp(p, f, ds, 2 * a - b), 2 * ha - hb) < 1e-12


def test_hvp_rejects_bad_direction():
    p, f, ds = random_instance(1)
    with pytest.raises(ValueError):
        model.hvp(p, f, ds, np.ones(p.size + 1))
    with pytest.raises(ValueError):
        model.hvp(p, f, ds, np.full(p.size, np.inf))


def test_dense_hessian_size_guard():
    p = model.init_params(2000, 2, 0)
    f = ReceptiveFields.full(2)
    with pytest.raises(ValueError, match="exceeds the limit"):
        model.dense_hessian(p, f, Dataset([[1.0, 0.0]], [0.0]))


# ---- sharpness


@pytest.mark.parametrize("seed", range(10))
def test_sharpness_matches_dense_eig(seed):
    p, f, ds = random_instance(400 + seed, d=8, m=4, K=4, n=8, label_scale=3.0)
    top = np.linalg.eigvalsh(model.dense_hessian(p, f, ds))[-1]
    lam = model.sharpness(p, f, ds, tol=1e-12, max_iter=20000)
    assert abs(lam - top) <= 1e-6 * abs(top)


def test_sharpness_negative_dominant_uses_shift():
    # operator diag(-5, 1): phase one locks onto -5, phase two must return 1
    A = np.diag([-5.0, 1.0])
    res = model.top_eigenpair(lambda v: A @ v, 2, tol=1e-14, max_iter=10000)
    assert res.converged
    assert res.value == pytest.approx(1.0, abs=1e-10)


def test_sharpness_nonconvergence_flagged():
    p, f, ds = random_instance(9, K=4)
    with pytest.warns(model.ConvergenceWarning):
        res = model.sharpness(p, f, ds, tol=1e-15, max_iter=2, full_output=True)
    assert not res.converged and np.isfinite(res.value)
    with pytest.raises(ValueError):
        model.sharpness(p, f, ds, tol=0.0)


def test_sharpness_warm_start_agrees():
    p, f, ds = random_instance(11, K=4)
    cold = model.sharpness(p, f, ds, tol=1e-12, max_iter=20000, full_output=True)
    warm = model.sharpness(p, f, ds, tol=1e-12, max_iter=20000, v0=cold.vector, full_output=True)
    assert warm.value == pytest.approx(cold.value, rel=1e-8)
    assert warm.iterations <= cold.iterations


@pytest.mark.parametrize("seed", range(6))
def test_tangent_top_eig_dense_and_path_norm(seed):
    p, f, ds = random_instance(500 + seed, d=6, m=3, K=3, n=8)
    Phi = model.jacobian(p, f, ds)
    top = np.linalg.eigvalsh(Phi.T @ Phi / ds.n)[-1]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", model.ConvergenceWarning)
        lam = model.tangent_top_eig(p, f, ds, tol=1e-13, max_iter=50000)
    assert abs(lam - top) <= 1e-6 * top
    assert lam >= 1.0 - 1e-12
    cloud = stability.extract_cloud(ds, f)
    assert lam >= 1 + 2 * stability.weighted_path_norm(p, cloud) - 1e-8


def test_per_sample_hessian_operator_norm():
    # grad^2 f = H - Phi^T Phi on a one-sample dataset with residual exactly 1
    gen = np.random.default_rng(0)
    checked = 0
    for trial in range(1000):
        p, f, _ = random_instance(trial % 50, d=6, m=3, K=3, n=1)
        x = gen.standard_normal(f.d)
        x *= gen.uniform(0, 1) / np.linalg.norm(x)
        ds = Dataset(x[None, :], [model.forward(p, f, x) - 1.0], R=1.0)
        if not model.is_margin_safe(p, f, ds):
            continue
        hf = model.dense_hessian(p, f, ds) - model.jacobian(p, f, ds).T @ model.jacobian(p, f, ds)
        om = gen.standard_normal(p.size)
        om /= np.linalg.norm(om)
        assert abs(om @ hf @ om) <= 2 * (ds.R + 1) + 1e-12
        checked += 1
    assert checked > 900


# ---- checkpoints


def test_checkpoint_roundtrip(tmp_path):
    p, f, _ = random_instance(2)
    path = model.save_checkpoint(tmp_path / "c.json", p, f)
    q, g = model.load_checkpoint(path)
    assert g == f
    assert np.array_equal(q.flatten(), p.flatten())


@pytest.mark.parametrize("mutate", [
    lambda d: d.update(format="other"),
    lambda d: d.update(version=99),
    lambda d: d.update(w=[[1.0]]),
    lambda d: d.pop("b"),
    lambda d: d.update(J=7),
])
def test_checkpoint_corruption(tmp_path, mutate):
    p, f, _ = random_instance(2)
    doc = model.checkpoint_dict(p, f)
    mutate(doc)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError):
        model.load_checkpoint(path)


def test_checkpoint_not_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(CheckpointError, match="unreadable"):
        model.load_checkpoint(path)
