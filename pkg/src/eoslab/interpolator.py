"""Flat interpolating network built from one anchor patch per nonzero label.

Each sample with ``y_i != 0`` gets a neuron whose filter is a unit-norm patch
``p_i`` of ``x_i`` that appears nowhere else in the patch cloud. The bias sits
strictly between ``rho_i`` (the largest overlap of ``p_i`` with any other
patch) and ``|p_i|^2``, so the neuron fires on exactly one patch of the whole
dataset. The output weight then makes the network hit every label, and the
Hessian at that point is provably flat: ``lambda_max <= 1 + (D^2 + 2/J^2)/n``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import model
from .model import Dataset, ModelParams, ReceptiveFields


class AssumptionError(ValueError):
    """The dataset does not admit unit-norm unique anchors."""


@dataclass
class AnchorMap:
    index: np.ndarray    # sample indices with nonzero label
    tau: np.ndarray      # chosen patch index per sample
    anchors: np.ndarray  # (k, m) anchor patches
    rho: np.ndarray      # largest inner product with any other patch

    def __len__(self) -> int:
        return len(self.index)


def _canonical_keys(cloud: np.ndarray) -> list[bytes]:
    # adding 0.0 maps -0.0 to +0.0 so signed zeros compare equal
    return [row.tobytes() for row in (cloud + 0.0)]


def find_anchors(dataset: Dataset, fields: ReceptiveFields, norm_tol: float = 1e-9) -> AnchorMap:
    P = fields.extract(dataset.X)
    n, J, m = P.shape
    cloud = P.reshape(n * J, m)
    norms = np.linalg.norm(cloud, axis=1)
    if np.any(norms > 1.0 + norm_tol):
        i = int(np.argmax(norms > 1.0 + norm_tol)) // J
        raise AssumptionError(f"sample {i} has a patch of norm > 1 ({norms.max():.6g})")
    keys = _canonical_keys(cloud)
    counts: dict[bytes, int] = {}
    for k in keys:
        counts[k] = counts.get(k, 0) + 1

    index, tau, anchors, rho = [], [], [], []
    for i in np.flatnonzero(dataset.y != 0):
        chosen = None
        for j in range(J):
            r = i * J + j
            if 1.0 - norm_tol <= norms[r] <= 1.0 + norm_tol and counts[keys[r]] == 1:
                chosen = j
                break
        if chosen is None:
            raise AssumptionError(f"sample {i} has no unit-norm patch that is unique in the cloud")
        r = i * J + chosen
        p = cloud[r]
        dots = cloud @ p
        dots[r] = -np.inf
        rho_i = float(dots.max()) if n * J > 1 else -1.0
        rho_i = max(rho_i, -1.0)
        if not rho_i < p @ p:
            raise AssumptionError(f"sample {i}: anchor is not separable (rho={rho_i})")
        index.append(int(i))
        tau.append(chosen)
        anchors.append(p.copy())
        rho.append(rho_i)
    return AnchorMap(
        np.asarray(index, dtype=int),
        np.asarray(tau, dtype=int),
        np.asarray(anchors, dtype=float).reshape(-1, m),
        np.asarray(rho, dtype=float),
    )


def construct(dataset: Dataset, fields: ReceptiveFields, anchors: AnchorMap | None = None,
              reparameterize: bool = True) -> ModelParams:
    """One neuron per anchor with bias at the midpoint of (rho, |p|^2).

    With ``reparameterize`` each neuron is rescaled so that ``|v| = 1``.
    """
    if anchors is None:
        anchors = find_anchors(dataset, fields)
    m = fields.m
    if len(anchors) == 0:
        return ModelParams.constant(0.0, m)
    J = fields.J
    w = anchors.anchors.copy()
    sq = np.einsum("km,km->k", w, w)
    b = (anchors.rho + sq) / 2
    v = J * dataset.y[anchors.index] / (sq - b)
    params = ModelParams(w, b, v, 0.0)
    if reparameterize:
        params = params.rescaled(np.abs(v))
    # w.p - b cancels badly when rho is close to |p|^2; each sample is driven by
    # a single neuron, so one multiplicative correction removes the rounding error
    pred = model.predict(params, fields, dataset.X)[anchors.index]
    params.v = params.v * (dataset.y[anchors.index] / pred)
    return params


@dataclass
class Verification:
    max_residual: float
    lambda_max: float
    bound: float
    passed: bool
    include_beta: bool
    converged: bool

    def as_dict(self) -> dict:
        return {
            "max_residual": self.max_residual,
            "lambda_max": self.lambda_max,
            "bound": self.bound,
            "pass": self.passed,
            "include_beta": self.include_beta,
            "converged": self.converged,
        }


def flatness_bound(D: float, J: int, n: int, include_beta: bool = True) -> float:
    return (1.0 if include_beta else 0.0) + (D * D + 2.0 / (J * J)) / n


def verify(params: ModelParams, dataset: Dataset, fields: ReceptiveFields,
           include_beta: bool = True, tol: float = 1e-10, max_iter: int = 20000) -> Verification:
    """Residuals at the training points and the top Hessian eigenvalue against the flatness bound.

    With ``include_beta=False`` the output bias is held fixed, which removes
    its unit contribution from both the Hessian and the bound.
    """
    pred = model.predict(params, fields, dataset.X)
    max_res = float(np.max(np.abs(pred - dataset.y)))
    if include_beta:
        res = model.sharpness(params, fields, dataset, tol=tol, max_iter=max_iter, full_output=True)
    else:
        op = model._HessianOperator(params, fields.extract(dataset.X), dataset.y)

        def mv(vec):
            vec = vec.copy()
            vec[-1] = 0.0
            out = op.matvec(vec)
            out[-1] = 0.0
            return out

        start = model._start(op.size, 0, None).copy()
        start[-1] = 0.0
        res = model.top_eigenpair(mv, op.size, tol, max_iter, v0=start)
    bound = flatness_bound(float(dataset.D), fields.J, dataset.n, include_beta)
    D = float(dataset.D)
    passed = max_res <= 1e-10 * (1 + D) and res.value <= bound + 1e-8 * (1 + bound)
    return Verification(max_res, float(res.value), bound, bool(passed), include_beta,
                        bool(res.converged))


def random_anchor_dataset(n: int, m: int, J: int, rng, zero_fraction: float = 0.0) -> tuple[Dataset, ReceptiveFields]:
    """Random data whose patches all lie on the unit sphere, labels in [-1, 1]."""
    from .rng import as_generator

    gen = as_generator(rng)
    P = gen.standard_normal((n, J, m))
    P /= np.linalg.norm(P, axis=2, keepdims=True)
    y = gen.uniform(-1.0, 1.0, n)
    y[gen.random(n) < zero_fraction] = 0.0
    fields = ReceptiveFields.disjoint(J * m, m)
    # unit-norm patches give ||x|| = sqrt(J)
    return Dataset(P.reshape(n, J * m), y, R=math.sqrt(J) * (1 + 1e-12)), fields
