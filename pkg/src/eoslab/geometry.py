"""Patch-cloud geometry: random-direction half-space depth, concentration curves, PCA spectra.

The depth estimator minimizes the closed half-space mass over a finite set of
random directions, so it is an upper bound on the exact Tukey depth.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import io
from .model import ModelParams
from .rng import as_generator

DIR_CHUNK = 64


def _points(cloud) -> np.ndarray:
    pts = getattr(cloud, "points", cloud)
    return np.atleast_2d(np.asarray(pts, dtype=float))


def random_directions(n_dirs: int, m: int, rng) -> np.ndarray:
    if n_dirs < 1:
        raise ValueError("n_dirs must be at least 1")
    U = as_generator(rng).standard_normal((n_dirs, m))
    nrm = np.linalg.norm(U, axis=1, keepdims=True)
    nrm[nrm == 0] = 1.0
    return U / nrm


def depths_from_directions(pts: np.ndarray, U: np.ndarray, probes: np.ndarray | None = None,
                           probe_index: np.ndarray | None = None) -> np.ndarray:
    """Min over rows of U of the fraction of cloud points with u.p >= u.z, per probe z.

    Probes are given either as coordinates or as indices into the cloud; the
    latter reuses the cloud's own projections so ties with the probe itself
    are exact.
    """
    N = pts.shape[0]
    nP = len(probe_index) if probe_index is not None else probes.shape[0]
    best = np.ones(nP)
    for lo in range(0, U.shape[0], DIR_CHUNK):
        Uc = U[lo:lo + DIR_CHUNK]
        proj = pts @ Uc.T  # (N, c)
        zp = proj[probe_index] if probe_index is not None else probes @ Uc.T
        for c in range(Uc.shape[0]):
            col = np.sort(proj[:, c])
            cnt = N - np.searchsorted(col, zp[:, c], side="left")
            np.minimum(best, cnt / N, out=best)
    return best


def approx_depth(cloud, z, n_dirs: int = 1000, rng=None) -> float:
    pts = _points(cloud)
    z = np.asarray(z, dtype=float).reshape(1, -1)
    U = random_directions(n_dirs, pts.shape[1], rng)
    return float(depths_from_directions(pts, U, probes=z)[0])


@dataclass
class DepthProfile:
    grid: np.ndarray
    psi: np.ndarray
    n_dirs: int
    n_probe: int
    depths: np.ndarray

    @property
    def area(self) -> float:
        return float(np.trapezoid(self.psi, self.grid))

    def to_csv(self, path):
        return io.write_csv(path, ["T", "psi"], zip(self.grid, self.psi))


def concentration_curve(cloud, n_dirs: int = 1000, n_probe: int = 2000, grid=None,
                        rng=None) -> DepthProfile:
    """Psi(T): fraction of (subsampled) cloud points whose approximate depth is at least T."""
    pts = _points(cloud)
    gen = as_generator(rng)
    grid = np.linspace(0.0, 0.5, 51) if grid is None else np.asarray(grid, dtype=float)
    N = pts.shape[0]
    if n_probe >= N:
        idx = np.arange(N)
    else:
        idx = np.sort(gen.choice(N, size=n_probe, replace=False))
    U = random_directions(n_dirs, pts.shape[1], gen)
    depth = depths_from_directions(pts, U, probe_index=idx)
    psi = (depth[None, :] >= grid[:, None]).mean(axis=1)
    return DepthProfile(grid, psi, n_dirs, len(idx), depth)


@dataclass
class VarianceSpectrum:
    eigenvalues: np.ndarray
    cumulative: np.ndarray

    def top_k(self, k: int) -> float:
        return float(self.cumulative[min(k, len(self.cumulative)) - 1])

    def to_csv(self, path):
        rows = ((r + 1, e, c) for r, (e, c) in enumerate(zip(self.eigenvalues, self.cumulative)))
        return io.write_csv(path, ["rank", "eigenvalue", "cumulative_fraction"], rows)


def variance_spectrum(cloud) -> VarianceSpectrum:
    """Eigenvalues of the centered sample covariance, descending, with cumulative fractions.

    When there are fewer points than dimensions the (N x N) Gram matrix is
    decomposed instead; the nonzero spectrum is the same.
    """
    pts = _points(cloud)
    N, m = pts.shape
    if N < 2:
        raise ValueError("variance spectrum needs at least two points")
    Xc = pts - pts.mean(axis=0)
    if N < m:
        ev = np.linalg.eigvalsh(Xc @ Xc.T / (N - 1))
        ev = np.concatenate([np.zeros(m - N), ev])
    else:
        ev = np.linalg.eigvalsh(Xc.T @ Xc / (N - 1))
    ev = np.clip(ev, 0.0, None)[::-1]
    total = ev.sum()
    cum = np.cumsum(ev) / total if total > 0 else np.ones_like(ev)
    return VarianceSpectrum(ev, cum)


@dataclass
class RateHistogram:
    edges: np.ndarray
    mass: np.ndarray
    rates: np.ndarray

    def to_csv(self, path):
        rows = zip(self.edges[:-1], self.edges[1:], self.mass)
        return io.write_csv(path, ["bin_low", "bin_high", "mass"], rows)


def activation_rates(params: ModelParams, cloud) -> np.ndarray:
    pts = _points(cloud)
    if params.K == 0:
        return np.zeros(0)
    return ((pts @ params.w.T - params.b) > 0).mean(axis=0)


def activation_rate_histogram(params: ModelParams, cloud, bins: int = 20) -> RateHistogram:
    """Normalized histogram of per-neuron activation probabilities over [0, 1]."""
    if bins < 1:
        raise ValueError("bins must be at least 1")
    rates = activation_rates(params, cloud)
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts, _ = np.histogram(rates, bins=edges)
    mass = counts / max(len(rates), 1)
    return RateHistogram(edges, mass, rates)
