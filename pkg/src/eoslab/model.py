"""Two-layer locally connected ReLU network with weight sharing (LCN-WS).

The network is

    f(x) = sum_k v_k * mean_j relu(w_k . pi_j(x) - b_k) + beta

where ``pi_j`` selects the coordinates ``subsets[j]`` of ``x``. The fully
connected network is the special case of a single receptive field covering
all coordinates.

Everything here is exact first and second order calculus for this model with
the gates frozen at the current sign pattern. A gate is open only when the
pre-activation is strictly positive, so at a tie the one-sided derivative
with the unit switched off is returned. :func:`min_margin` reports how close
a parameter point is to such a tie.

Parameter vectors are flattened in the fixed order
``(w_1, ..., w_K, b_1, ..., b_K, v_1, ..., v_K, beta)``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .rng import RngStream, as_generator

CHECKPOINT_FORMAT = "eoslab-checkpoint"
CHECKPOINT_VERSION = 1
DENSE_HESSIAN_LIMIT = 5000


class ConvergenceWarning(UserWarning):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ReceptiveFields:
    """Coordinate subsets defining patch extraction (0-based indices)."""

    d: int
    subsets: np.ndarray = field(repr=False)

    def __post_init__(self):
        subsets = np.asarray(self.subsets, dtype=np.intp)
        if subsets.ndim != 2 or subsets.shape[0] < 1 or subsets.shape[1] < 1:
            raise ValueError("subsets must be a non-empty (J, m) integer array")
        if self.d < 1 or subsets.shape[1] > self.d:
            raise ValueError(f"patch size {subsets.shape[1]} incompatible with d={self.d}")
        if subsets.min() < 0 or subsets.max() >= self.d:
            raise ValueError(f"subset indices must lie in 0..{self.d - 1}")
        for row in subsets:
            if len(set(row.tolist())) != len(row):
                raise ValueError("each receptive field must contain distinct coordinates")
        subsets.setflags(write=False)
        object.__setattr__(self, "subsets", subsets)

    @property
    def m(self) -> int:
        return self.subsets.shape[1]

    @property
    def J(self) -> int:
        return self.subsets.shape[0]

    @classmethod
    def full(cls, d: int) -> "ReceptiveFields":
        """The fully connected case: one field covering every coordinate."""
        return cls(d, np.arange(d)[None, :])

    @classmethod
    def disjoint(cls, d: int, m: int) -> "ReceptiveFields":
        """Consecutive non-overlapping blocks ``{jm, ..., jm + m - 1}``, J = d // m."""
        J = d // m
        if J < 1:
            raise ValueError(f"m={m} larger than d={d}")
        return cls(d, np.arange(J * m).reshape(J, m))

    def extract(self, X: np.ndarray) -> np.ndarray:
        """Patches of a batch ``X`` of shape (n, d), returned as (n, J, m)."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[-1] != self.d:
            raise ValueError(f"inputs have dimension {X.shape[-1]}, expected {self.d}")
        return X[:, self.subsets]

    def __eq__(self, other):
        return (
            isinstance(other, ReceptiveFields)
            and self.d == other.d
            and np.array_equal(self.subsets, other.subsets)
        )

    def __hash__(self):
        return hash((self.d, self.subsets.tobytes()))


@dataclass
class ModelParams:
    """Shared filters ``w`` (K, m), biases ``b``, output weights ``v`` and bias ``beta``."""

    w: np.ndarray
    b: np.ndarray
    v: np.ndarray
    beta: float = 0.0

    def __post_init__(self):
        self.w = np.atleast_2d(np.asarray(self.w, dtype=float))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.v = np.asarray(self.v, dtype=float).reshape(-1)
        self.beta = float(self.beta)
        K = self.b.shape[0]
        if self.w.size == 0:
            self.w = self.w.reshape(K, -1) if K else self.w.reshape(0, self.w.shape[-1])
        if self.w.shape[0] != K or self.v.shape[0] != K:
            raise ValueError(
                f"inconsistent widths: w {self.w.shape}, b {self.b.shape}, v {self.v.shape}"
            )
        if not (
            np.all(np.isfinite(self.w))
            and np.all(np.isfinite(self.b))
            and np.all(np.isfinite(self.v))
            and math.isfinite(self.beta)
        ):
            raise ValueError("parameters must be finite")
        if K and np.any(np.linalg.norm(self.w, axis=1) == 0):
            raise ValueError("zero filter: every w_k must be non-zero")

    @property
    def K(self) -> int:
        return self.b.shape[0]

    @property
    def m(self) -> int:
        return self.w.shape[1]

    @property
    def size(self) -> int:
        return param_count(self.K, self.m)

    @classmethod
    def constant(cls, beta: float, m: int = 1) -> "ModelParams":
        """The width-zero model ``f = beta``."""
        return cls(np.zeros((0, m)), np.zeros(0), np.zeros(0), beta)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w.ravel(), self.b, self.v, [self.beta]])

    @classmethod
    def unflatten(cls, theta: np.ndarray, K: int, m: int) -> "ModelParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (param_count(K, m),):
            raise ValueError(f"flat vector of length {theta.shape} does not match K={K}, m={m}")
        Km = K * m
        return cls(
            theta[:Km].reshape(K, m).copy(),
            theta[Km : Km + K].copy(),
            theta[Km + K : Km + 2 * K].copy(),
            float(theta[-1]),
        )

    def rescaled(self, c) -> "ModelParams":
        """Neuron-wise rescaling (w, b, v) -> (c w, c b, v / c); realizes the same function."""
        c = np.broadcast_to(np.asarray(c, dtype=float), (self.K,))
        if np.any(c <= 0):
            raise ValueError("rescaling factors must be positive")
        return ModelParams(self.w * c[:, None], self.b * c, self.v / c, self.beta)

    def copy(self) -> "ModelParams":
        return ModelParams(self.w.copy(), self.b.copy(), self.v.copy(), self.beta)


def param_count(K: int, m: int) -> int:
    return K * (m + 2) + 1


@dataclass
class Dataset:
    """Inputs ``X`` (n, d), labels ``y``, and the bounds R >= max ||x|| and D >= max |y|.

    ``f_true`` optionally holds noiseless teacher values for excess-risk
    estimation.
    """

    X: np.ndarray
    y: np.ndarray
    R: float | None = None
    D: float | None = None
    f_true: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.X.shape[0] != self.y.shape[0] or self.X.shape[0] < 1:
            raise ValueError("X and y must have the same positive number of rows")
        max_norm = float(np.max(np.linalg.norm(self.X, axis=1)))
        max_label = float(np.max(np.abs(self.y)))
        if self.R is None:
            self.R = max_norm
        elif max_norm > self.R * (1 + 1e-12):
            raise ValueError(f"input norm {max_norm} exceeds R={self.R}")
        if self.D is None:
            self.D = max_label
        elif max_label > self.D * (1 + 1e-12):
            raise ValueError(f"label {max_label} exceeds D={self.D}")
        if self.f_true is not None:
            self.f_true = np.asarray(self.f_true, dtype=float).reshape(-1)
            if self.f_true.shape != self.y.shape:
                raise ValueError("f_true must match y")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


# --------------------------------------------------------------------------
# internal kernels on the patch tensor P of shape (n, J, m)


def _check(params: ModelParams, fields: ReceptiveFields):
    if params.K and params.m != fields.m:
        raise ValueError(f"filters have dimension {params.m}, receptive fields have m={fields.m}")


def _patches(fields: ReceptiveFields, dataset: Dataset) -> np.ndarray:
    if dataset.d != fields.d:
        raise ValueError(f"dataset dimension {dataset.d} != receptive-field dimension {fields.d}")
    return fields.extract(dataset.X)


class _State(NamedTuple):
    pre: np.ndarray  # (n, J, K) pre-activations w.p - b
    gate: np.ndarray  # (n, J, K) float 0/1
    h: np.ndarray  # (n, K) pooled activations
    out: np.ndarray  # (n,) network outputs


def _state(params: ModelParams, P: np.ndarray) -> _State:
    n, J, m = P.shape
    pre = (P.reshape(n * J, m) @ params.w.T).reshape(n, J, -1)
    pre -= params.b
    gate = (pre > 0).astype(float)
    h = np.maximum(pre, 0.0).mean(axis=1)
    out = h @ params.v + params.beta
    return _State(pre, gate, h, out)


def _jvp(params: ModelParams, P, st: _State, dW, db, dv, dbeta) -> np.ndarray:
    """Per-sample directional derivatives grad f(x_i) . dir, shape (n,)."""
    n, J, m = P.shape
    dz = (P.reshape(n * J, m) @ dW.T).reshape(n, J, -1)
    dz -= db
    dz *= st.gate
    return dz.mean(axis=1) @ params.v + st.h @ dv + dbeta


def _vjp(params: ModelParams, P, st: _State, c: np.ndarray):
    """sum_i c_i grad f(x_i), returned as (gW, gb, gv, gbeta)."""
    n, J, m = P.shape
    gc = st.gate * c[:, None, None]  # (n, J, K)
    s = (gc.reshape(n * J, -1).T @ P.reshape(n * J, m)) / J
    t = gc.sum(axis=(0, 1)) / J
    gW = params.v[:, None] * s
    gb = -params.v * t
    gv = st.h.T @ c
    return gW, gb, gv, float(c.sum())


def _pack(gW, gb, gv, gbeta) -> np.ndarray:
    return np.concatenate([np.ravel(gW), gb, gv, [gbeta]])


def _split(vec: np.ndarray, K: int, m: int):
    Km = K * m
    return vec[:Km].reshape(K, m), vec[Km : Km + K], vec[Km + K : Km + 2 * K], float(vec[-1])


# --------------------------------------------------------------------------
# public operations


def forward(params: ModelParams, fields: ReceptiveFields, x: np.ndarray) -> np.ndarray | float:
    """Network output at a single input (returns float) or a batch (n, d)."""
    _check(params, fields)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    out = _state(params, fields.extract(x)).out
    return float(out[0]) if single else out


def predict(params: ModelParams, fields: ReceptiveFields, X: np.ndarray) -> np.ndarray:
    _check(params, fields)
    return _state(params, fields.extract(np.atleast_2d(X))).out


def loss(params: ModelParams, fields: ReceptiveFields, dataset: Dataset) -> float:
    """Halved mean squared error L = (1/2n) sum (f(x_i) - y_i)^2."""
    _check(params, fields)
    r = _state(params, _patches(fields, dataset)).out - dataset.y
    return 0.5 * float(np.mean(r * r))


def plugin_risk(params: ModelParams, fields: ReceptiveFields, dataset: Dataset) -> float:
    """Un-halved empirical risk (1/n) sum (f(x_i) - y_i)^2, equal to 2 * loss."""
    return 2.0 * loss(params, fields, dataset)


def gates(params: ModelParams, fields: ReceptiveFields, dataset: Dataset) -> np.ndarray:
    """Gating matrix of shape (n*J, K); row (i, j) sits at index i*J + j."""
    _check(params, fields)
    P = _patches(fields, dataset)
    n, J, m = P.shape
    pre = P.reshape(n * J, m) @ params.w.T - params.b
    return (pre > 0).astype(np.int8)


def min_margin(params: ModelParams, fields: ReceptiveFields, dataset: Dataset) -> float:
    """Smallest |w_k . pi_j(x_i) - b_k| over all (i, j, k); inf for K = 0."""
    if params.K == 0:
        return math.inf
    P = _patches(fields, dataset)
    return float(np.min(np.abs(P @ params.w.T - params.b)))


def is_margin_safe(params, fields, dataset, rel: float = 1e-3) -> bool:
    """Whether the minimum margin exceeds ``rel * R * max_k ||w_k||``."""
    if params.K == 0:
        return True
    scale = dataset.R * float(np.max(np.linalg.norm(params.w, axis=1)))
    return min_margin(params, fields, dataset) > rel * scale


def gradient(params: ModelParams, fields: ReceptiveFields, dataset: Dataset) -> np.ndarray:
    """Flat gradient of the halved loss."""
    _check(params, fields)
    P = _patches(fields, dataset)
    st = _state(params, P)
    r = (st.out - dataset.y) / dataset.n
    return _pack(*_vjp(params, P, st, r))


def loss_and_gradient(params: ModelParams, P: np.ndarray, y: np.ndarray):
    """Loss and flat gradient directly from a patch tensor (used by the GD loop)."""
    st = _state(params, P)
    r = st.out - y
    L = 0.5 * float(np.mean(r * r))
    return L, _pack(*_vjp(params, P, st, r / len(y)))


def gradient_factorized(params: ModelParams, fields: ReceptiveFields, dataset: Dataset) -> np.ndarray:
    """Filter gradient as G^T X with G = (r_lift v^T / nJ) * S.

    ``X`` is the (nJ, m) patch matrix, ``S`` the gating matrix and ``r_lift``
    the residual of sample i repeated over its J patches.
    """
    _check(params, fields)
    P = _patches(fields, dataset)
    n, J, m = P.shape
    X = P.reshape(n * J, m)
    out = _state(params, P).out
    r_lift = np.repeat(out - dataset.y, J)
    S = gates(params, fields, dataset).astype(float)
    G = (np.outer(r_lift, params.v) / (n * J)) * S
    return G.T @ X


def hvp(params: ModelParams, fields: ReceptiveFields, dataset: Dataset, direction: np.ndarray) -> np.ndarray:
    """Loss-Hessian times ``direction`` without forming the Hessian."""
    _check(params, fields)
    return _HessianOperator(params, _patches(fields, dataset), dataset.y).matvec(direction)


class _HessianOperator:
    """Matrix-free T_D + R_D for a fixed parameter point.

    T_D = (1/n) sum_i grad f_i grad f_i^T is the Gauss-Newton part; R_D =
    (1/n) sum_i r_i hess f_i couples each filter block to its output weight
    only.
    """

    def __init__(self, params: ModelParams, P: np.ndarray, y: np.ndarray):
        self.params = params
        self.P = P
        self.n, self.J, self.m = P.shape
        self.K = params.K
        self.st = _state(params, P)
        r = self.st.out - y
        self.residual = r
        # residual-weighted second-derivative blocks: (1/n) sum_i r_i s_ik and (1/n) sum_i r_i t_ik
        rg = self.st.gate * (r / self.n)[:, None, None]
        nJ = self.n * self.J
        self.s_r = (rg.reshape(nJ, -1).T @ P.reshape(nJ, self.m)) / self.J
        self.t_r = rg.sum(axis=(0, 1)) / self.J
        self.size = param_count(self.K, self.m)

    def gauss_newton(self, vec: np.ndarray) -> np.ndarray:
        dW, db, dv, dbeta = _split(vec, self.K, self.m)
        c = _jvp(self.params, self.P, self.st, dW, db, dv, dbeta) / self.n
        return _pack(*_vjp(self.params, self.P, self.st, c))

    def residual_part(self, vec: np.ndarray) -> np.ndarray:
        dW, db, dv, _ = _split(vec, self.K, self.m)
        # d^2 f / dw_k dv_k = s_k ; d^2 f / db_k dv_k = -t_k (f depends on -b_k)
        rW = self.s_r * dv[:, None]
        rb = -self.t_r * dv
        rv = np.einsum("km,km->k", self.s_r, dW) - self.t_r * db
        return _pack(rW, rb, rv, 0.0)

    def matvec(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise ValueError(f"direction has shape {vec.shape}, expected ({self.size},)")
        if not np.all(np.isfinite(vec)):
            raise ValueError("direction must be finite")
        return self.gauss_newton(vec) + self.residual_part(vec)


def jacobian(params: ModelParams, fields: ReceptiveFields, dataset: Dataset) -> np.ndarray:
    """Per-sample gradients of f stacked as an (n, N) matrix, assembled entry by entry."""
    _check(params, fields)
    P = _patches(fields, dataset)
    n, J, m = P.shape
    K = params.K
    pre = np.einsum("njm,km->njk", P, params.w) - params.b[None, None, :]
    g = pre > 0
    Phi = np.zeros((n, param_count(K, m)))
    for i in range(n):
        for k in range(K):
            active = g[i, :, k]
            cnt = active.sum()
            Phi[i, k * m : (k + 1) * m] = params.v[k] * P[i, active].sum(axis=0) / J
            Phi[i, K * m + k] = -params.v[k] * cnt / J
            Phi[i, K * m + K + k] = pre[i, active, k].sum() / J
        Phi[i, -1] = 1.0
    return Phi


def dense_hessian(params: ModelParams, fields: ReceptiveFields, dataset: Dataset) -> np.ndarray:
    """Explicit loss Hessian; refuses parameter counts above DENSE_HESSIAN_LIMIT."""
    N = params.size
    if N > DENSE_HESSIAN_LIMIT:
        raise ValueError(f"dense Hessian of size {N} exceeds the limit {DENSE_HESSIAN_LIMIT}")
    P = _patches(fields, dataset)
    n, J, m = P.shape
    K = params.K
    Phi = jacobian(params, fields, dataset)
    H = Phi.T @ Phi / n
    r = np.array([forward(params, fields, x) for x in dataset.X]) - dataset.y
    for i in range(n):
        for k in range(K):
            active = [j for j in range(J) if params.w[k] @ P[i, j] - params.b[k] > 0]
            s = sum((P[i, j] for j in active), np.zeros(m)) / J
            t = len(active) / J
            iv = K * m + K + k
            H[k * m : (k + 1) * m, iv] += r[i] * s / n
            H[iv, k * m : (k + 1) * m] += r[i] * s / n
            H[K * m + k, iv] -= r[i] * t / n
            H[iv, K * m + k] -= r[i] * t / n
    return H


# --------------------------------------------------------------------------
# extreme eigenvalues by power iteration


class EigenResult(NamedTuple):
    value: float
    vector: np.ndarray
    converged: bool
    iterations: int


def _power(matvec, size, tol, max_iter, v0, shift=0.0):
    v = v0 / np.linalg.norm(v0)
    Av = matvec(v) + shift * v
    rq = float(v @ Av)
    for it in range(1, max_iter + 1):
        nrm = np.linalg.norm(Av)
        if nrm == 0.0:
            return EigenResult(rq - shift, v, True, it)
        v = Av / nrm
        Av = matvec(v) + shift * v
        new = float(v @ Av)
        if abs(new - rq) < tol * (1.0 + abs(new)):
            return EigenResult(new - shift, v, True, it)
        rq = new
    return EigenResult(rq - shift, v, False, max_iter)


def _start(size, seed, v0):
    if v0 is not None and np.linalg.norm(v0) > 0:
        return np.asarray(v0, dtype=float)
    return RngStream(seed, 6).generator().standard_normal(size)


def top_eigenpair(matvec, size, tol=1e-8, max_iter=1000, seed=0, v0=None) -> EigenResult:
    """Largest algebraic eigenvalue of a symmetric operator by two-phase shifted power iteration.

    Phase one finds the dominant-magnitude eigenvalue mu. If mu is negative a
    second run on ``A + |mu| I`` recovers the top algebraic eigenvalue.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    first = _power(matvec, size, tol, max_iter, _start(size, seed, v0))
    if first.value >= 0:
        return first
    shift = abs(first.value)
    second = _power(matvec, size, tol, max_iter, _start(size, seed + 1, None), shift=shift)
    return EigenResult(second.value, second.vector, first.converged and second.converged,
                       first.iterations + second.iterations)


def sharpness(
    params: ModelParams,
    fields: ReceptiveFields,
    dataset: Dataset,
    tol: float = 1e-8,
    max_iter: int = 1000,
    seed: int = 0,
    v0: np.ndarray | None = None,
    full_output: bool = False,
):
    """Top algebraic eigenvalue of the loss Hessian.

    Returns the Rayleigh quotient at convergence; with ``full_output`` an
    :class:`EigenResult` including the eigenvector and a convergence flag.
    A :class:`ConvergenceWarning` is raised when ``max_iter`` is exhausted.
    """
    _check(params, fields)
    op = _HessianOperator(params, _patches(fields, dataset), dataset.y)
    res = top_eigenpair(op.matvec, op.size, tol, max_iter, seed, v0)
    if not res.converged:
        warnings.warn(f"sharpness did not converge in {max_iter} iterations", ConvergenceWarning)
    return res if full_output else res.value


def tangent_top_eig(
    params: ModelParams,
    fields: ReceptiveFields,
    dataset: Dataset,
    tol: float = 1e-8,
    max_iter: int = 1000,
    seed: int = 0,
    full_output: bool = False,
):
    """Top eigenvalue of the Gauss-Newton part T_D alone (positive semidefinite, at least 1)."""
    _check(params, fields)
    op = _HessianOperator(params, _patches(fields, dataset), dataset.y)
    res = _power(op.gauss_newton, op.size, tol, max_iter, _start(op.size, seed, None))
    if not res.converged:
        warnings.warn(f"tangent eigenvalue did not converge in {max_iter} iterations", ConvergenceWarning)
    return res if full_output else res.value


# --------------------------------------------------------------------------
# initialization and checkpoints


def init_params(K: int, m: int, rng, beta: float = 0.0) -> ModelParams:
    """Gaussian filters with variance 2/m, output weights with variance 2/K, zero biases."""
    gen = as_generator(rng)
    w = gen.standard_normal((K, m)) * math.sqrt(2.0 / m)
    while K and np.any(np.linalg.norm(w, axis=1) == 0):
        bad = np.linalg.norm(w, axis=1) == 0
        w[bad] = gen.standard_normal((int(bad.sum()), m)) * math.sqrt(2.0 / m)
    v = gen.standard_normal(K) * math.sqrt(2.0 / max(K, 1))
    return ModelParams(w, np.zeros(K), v, beta)


def checkpoint_dict(params: ModelParams, fields: ReceptiveFields) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "d": fields.d,
        "m": fields.m,
        "J": fields.J,
        "subsets": fields.subsets.tolist(),
        "K": params.K,
        "w": params.w.tolist(),
        "b": params.b.tolist(),
        "v": params.v.tolist(),
        "beta": params.beta,
    }


def save_checkpoint(path, params: ModelParams, fields: ReceptiveFields) -> Path:
    from .io import atomic_write_text

    return atomic_write_text(path, json.dumps(checkpoint_dict(params, fields), indent=1) + "\n")


def load_checkpoint(path) -> tuple[ModelParams, ReceptiveFields]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    return checkpoint_from_dict(doc, source=str(path))


def checkpoint_from_dict(doc: dict, source: str = "<dict>") -> tuple[ModelParams, ReceptiveFields]:
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{source}: not an {CHECKPOINT_FORMAT} document")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {doc.get('version')!r}")
    try:
        fields = ReceptiveFields(int(doc["d"]), np.array(doc["subsets"], dtype=np.intp))
        K, m = int(doc["K"]), int(doc["m"])
        w = np.array(doc["w"], dtype=float).reshape(K, m)
        params = ModelParams(w, doc["b"], doc["v"], doc["beta"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{source}: malformed checkpoint ({exc})") from exc
    if fields.m != m or fields.J != int(doc.get("J", fields.J)) or params.K != K:
        raise CheckpointError(f"{source}: header does not match arrays")
    return params, fields
