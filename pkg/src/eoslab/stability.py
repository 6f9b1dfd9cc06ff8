"""Patch-space weight function, weighted path norm and the sharpness certificate.

For a hyperplane ``(u, t)`` in patch space with unit normal ``u`` the empirical
statistics over a patch cloud are

    p(u, t) = mean 1{u.p > t}            activation probability
    r(u, t) = mean relu(u.p - t)         expected ReLU margin
    a(u, t) = mean p 1{u.p > t}          gated first moment

and the one-sided weight is ``r * sqrt(p**2 + |a|**2)``. The weight function
is the smaller of the two orientations ``(u, t)`` and ``(-u, -t)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import model
from .model import Dataset, ModelParams, ReceptiveFields


@dataclass
class PatchCloud:
    """A multiset of N patches in R^m."""

    points: np.ndarray
    source: str = "external"

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] < 1:
            raise ValueError("a patch cloud needs at least one point")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("patch cloud contains non-finite values")

    @property
    def N(self) -> int:
        return self.points.shape[0]

    @property
    def m(self) -> int:
        return self.points.shape[1]

    @property
    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.points, axis=1)))


def extract_cloud(dataset: Dataset, fields: ReceptiveFields) -> PatchCloud:
    """All n*J patches, row ``i*J + j`` holding ``pi_j(x_i)``."""
    P = fields.extract(dataset.X)
    return PatchCloud(P.reshape(-1, fields.m), source="dataset")


@dataclass(frozen=True)
class HyperplaneQuery:
    u: np.ndarray
    t: float

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float).reshape(-1)
        if abs(np.linalg.norm(u) - 1.0) >= 1e-10:
            raise ValueError(f"u must be a unit vector (norm {np.linalg.norm(u)})")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "t", float(self.t))

    @classmethod
    def from_neuron(cls, w, b) -> "HyperplaneQuery":
        w = np.asarray(w, dtype=float)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            raise ValueError("zero filter has no hyperplane")
        return cls(w / nrm, b / nrm)

    def flipped(self) -> "HyperplaneQuery":
        return HyperplaneQuery(-self.u, -self.t)


class WeightStats(NamedTuple):
    p: float
    r: float
    a: np.ndarray


def weight_stats(cloud: PatchCloud, q: HyperplaneQuery) -> WeightStats:
    if q.u.shape[0] != cloud.m:
        raise ValueError(f"query dimension {q.u.shape[0]} != cloud dimension {cloud.m}")
    margin = cloud.points @ q.u - q.t
    active = margin > 0
    N = cloud.N
    return WeightStats(
        float(active.sum()) / N,
        float(np.maximum(margin, 0.0).sum()) / N,
        cloud.points[active].sum(axis=0) / N,
    )


def _one_sided(stats: WeightStats) -> float:
    return stats.r * math.sqrt(stats.p ** 2 + float(stats.a @ stats.a))


def weight_function(cloud: PatchCloud, q: HyperplaneQuery) -> float:
    """Min over both orientations of ``r * sqrt(p^2 + |a|^2)``; zero when either side is empty."""
    return min(_one_sided(weight_stats(cloud, q)), _one_sided(weight_stats(cloud, q.flipped())))


def weight_function_conditional(cloud: PatchCloud, q: HyperplaneQuery) -> float:
    """Same quantity written with conditional expectations.

    ``P(active)^2 * E[margin | active] * sqrt(1 + |E[p | active]|^2)`` per
    orientation. Undefined (nan) when an orientation has no active patch.
    """
    vals = []
    for qq in (q, q.flipped()):
        margin = cloud.points @ qq.u - qq.t
        active = margin > 0
        if not active.any():
            return math.nan
        prob = active.mean()
        cond_margin = margin[active].mean()
        cond_mean = cloud.points[active].mean(axis=0)
        vals.append(prob ** 2 * cond_margin * math.sqrt(1.0 + cond_mean @ cond_mean))
    return min(vals)


def _neuron_weights(params: ModelParams, cloud: PatchCloud) -> np.ndarray:
    """Weight function at every neuron's normalized hyperplane, shape (K,)."""
    K = params.K
    if K == 0:
        return np.zeros(0)
    if params.m != cloud.m:
        raise ValueError(f"filter dimension {params.m} != cloud dimension {cloud.m}")
    norms = np.linalg.norm(params.w, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero filter: weighted path norm needs w_k != 0")
    U = params.w / norms[:, None]
    T = params.b / norms
    pts = cloud.points
    N = cloud.N
    margin = pts @ U.T - T  # (N, K)
    out = np.empty((2, K))
    for side, mg in enumerate((margin, -margin)):
        active = (mg > 0).astype(float)
        p = active.sum(axis=0) / N
        r = np.maximum(mg, 0.0).sum(axis=0) / N
        a = active.T @ pts / N
        out[side] = r * np.sqrt(p * p + np.einsum("km,km->k", a, a))
    return out.min(axis=0)


def weighted_path_norm(params: ModelParams, cloud: PatchCloud) -> float:
    """sum_k |v_k| ||w_k|| g(w_k/||w_k||, b_k/||w_k||)."""
    if params.K == 0:
        return 0.0
    g = _neuron_weights(params, cloud)
    return float(np.sum(np.abs(params.v) * np.linalg.norm(params.w, axis=1) * g))


def path_norm(params: ModelParams) -> float:
    """Unweighted path norm sum_k |v_k| ||w_k||."""
    return float(np.sum(np.abs(params.v) * np.linalg.norm(params.w, axis=1)))


@dataclass
class Certificate:
    lhs: float
    rhs: float
    slack: float
    holds: bool
    sharpness: float
    loss: float
    R: float
    converged: bool
    min_margin: float
    eta: float | None = None
    rhs_beos: float | None = None
    holds_beos: bool | None = None
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "lhs", "rhs", "slack", "holds", "sharpness", "loss", "R", "converged",
            "min_margin", "eta", "rhs_beos", "holds_beos")}
        d.update(self.extra)
        return d


def certificate_rhs(lam: float, L: float, R: float) -> float:
    return 0.5 * (lam + 2.0 * (R + 1.0) * math.sqrt(2.0 * L) - 1.0)


def theorem1_certificate(
    params: ModelParams,
    fields: ReceptiveFields,
    dataset: Dataset,
    eta: float | None = None,
    tol: float = 1e-10,
    max_iter: int = 20000,
    seed: int = 0,
    lam: float | None = None,
) -> Certificate:
    """Check that the weighted path norm is controlled by sharpness and loss.

    ``lhs = weighted path norm`` and ``rhs = (lambda_max + 2(R+1) sqrt(2L) - 1) / 2``.
    A precomputed ``lam`` skips the eigen-solve. Since the power iteration
    returns a Rayleigh quotient (never above the true top eigenvalue), an
    inaccurate ``lambda_max`` can only make the check stricter.
    """
    cloud = extract_cloud(dataset, fields)
    lhs = weighted_path_norm(params, cloud)
    L = model.loss(params, fields, dataset)
    converged = True
    if lam is None:
        res = model.sharpness(params, fields, dataset, tol=tol, max_iter=max_iter, seed=seed,
                              full_output=True)
        lam, converged = res.value, res.converged
    R = float(dataset.R)
    rhs = certificate_rhs(lam, L, R)
    cert = Certificate(
        lhs=lhs,
        rhs=rhs,
        slack=rhs - lhs,
        holds=lhs <= rhs + 1e-8 * (1.0 + abs(rhs)),
        sharpness=lam,
        loss=L,
        R=R,
        converged=converged,
        min_margin=model.min_margin(params, fields, dataset),
    )
    if eta is not None:
        cert.eta = eta
        cert.rhs_beos = 1.0 / eta - 0.5 + (R + 1.0) * math.sqrt(2.0 * L)
        cert.holds_beos = lhs <= cert.rhs_beos + 1e-8 * (1.0 + abs(cert.rhs_beos))
    return cert


# --------------------------------------------------------------------------
# uniform deviation of the empirical weight function


def query_grid(m: int, n_dirs: int = 256, n_offsets: int = 64, seed: int = 0):
    """Random unit directions (n_dirs, m) and equispaced offsets in [-1, 1]."""
    from .rng import RngStream

    U = RngStream(seed, 8).generator().standard_normal((n_dirs, m))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    return U, np.linspace(-1.0, 1.0, n_offsets)


def one_sided_grid(points: np.ndarray, U: np.ndarray, T: np.ndarray,
                   chunk: int = 8192) -> np.ndarray:
    """One-sided weight ``r sqrt(p^2 + |a|^2)`` on every (direction, offset).

    ``points`` may be (N, m) or (n, J, m); result has shape (len(U), len(T)).
    Sums are accumulated over point chunks to bound memory.
    """
    pts = points.reshape(-1, points.shape[-1])
    N = pts.shape[0]
    D, nT = U.shape[0], len(T)
    cnt = np.zeros((D, nT))
    rsum = np.zeros((D, nT))
    asum = np.zeros((D, nT, pts.shape[1]))
    for lo in range(0, N, chunk):
        blk = pts[lo:lo + chunk]
        proj = blk @ U.T
        for c, t in enumerate(T):
            mg = proj - t
            active = (mg > 0).astype(float)
            cnt[:, c] += active.sum(axis=0)
            rsum[:, c] += np.maximum(mg, 0.0).sum(axis=0)
            asum[:, c] += active.T @ blk
    p, r, a = cnt / N, rsum / N, asum / N
    return r * np.sqrt(p * p + np.einsum("dcm,dcm->dc", a, a))


def weight_grid(points: np.ndarray, U: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Two-sided weight function on a (direction, offset) grid."""
    plus = one_sided_grid(points, U, T)
    minus = one_sided_grid(points, -U, -T)
    return np.minimum(plus, minus)


def deviation_experiment(
    d: int,
    m: int,
    J: int | None = None,
    n_list=(250, 1000, 4000),
    grid_size: tuple[int, int] = (256, 64),
    seed: int = 0,
    n_population: int = 100_000,
) -> list[dict]:
    """Sup over a fixed (u, t) grid of |g_D - g_pop| for fresh spherical datasets.

    The population weight is replaced by the same statistic on a large
    independent sample of size ``n_population``.
    """
    from .datagen import sample_sphere
    from .rng import RngStream

    fields = ReceptiveFields.disjoint(d, m)
    if J is not None and J != fields.J:
        fields = ReceptiveFields(d, fields.subsets[:J])
    U, T = query_grid(m, grid_size[0], grid_size[1], seed)
    base = RngStream(seed)
    Xpop = sample_sphere(n_population, d, base.child("population"))
    g_pop = weight_grid(fields.extract(Xpop), U, T)
    rows = []
    for n in n_list:
        X = sample_sphere(n, d, RngStream(seed, 1000 + int(n)))
        g_emp = weight_grid(fields.extract(X), U, T)
        rows.append({
            "n": int(n),
            "sup_deviation": float(np.max(np.abs(g_emp - g_pop))),
            "mean_deviation": float(np.mean(np.abs(g_emp - g_pop))),
        })
    return rows
