"""Weight-sharing ablation on clustered-patch data.

Three architectures see the same inputs in R^{J m}:

* ``fcn``: one receptive field covering the whole input;
* ``lcn``: locally connected without sharing, one bank of K filters per
  location (K*J filters in total), shared output weights and average pooling
  over locations;
* ``lcn-ws``: the weight-shared model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import training
from .datagen import ClusteredPatchSpec, clustered_patch_sample
from .model import ReceptiveFields
from .rng import RngStream

ABLATION_ARCHS = ("fcn", "lcn", "lcn-ws")


class UnsharedKernel:
    """Flat layout: W (J, K, m), b (J, K), v (K), beta."""

    def __init__(self, P: np.ndarray, y: np.ndarray, K: int):
        self.n, self.J, self.m = P.shape
        self.Pt = np.ascontiguousarray(P.transpose(1, 0, 2))  # (J, n, m)
        self.y = y
        self.K = K
        self.size = self.J * K * (self.m + 1) + K + 1

    def split(self, theta):
        J, K, m = self.J, self.K, self.m
        a = J * K * m
        c = a + J * K
        return theta[:a].reshape(J, K, m), theta[a:c].reshape(J, K), theta[c:c + K], theta[-1]

    def _forward(self, theta):
        W, b, v, beta = self.split(theta)
        pre = self.Pt @ W.transpose(0, 2, 1)  # (J, n, K)
        pre -= b[:, None, :]
        gate = pre > 0
        np.maximum(pre, 0.0, out=pre)
        h = pre.mean(axis=0)  # (n, K)
        return gate, h, h @ v + beta

    def outputs(self, theta) -> np.ndarray:
        return self._forward(theta)[2]

    def loss_grad(self, theta):
        W, b, v, beta = self.split(theta)
        gate, h, out = self._forward(theta)
        r = out - self.y
        n, J = self.n, self.J
        L = 0.5 * float(r @ r) / n
        c = r / n
        gc = gate * c[None, :, None]  # (J, n, K)
        g = np.empty_like(theta)
        a = J * self.K * self.m
        gW = (gc.transpose(0, 2, 1) @ self.Pt) * (v[None, :, None] / J)
        g[:a] = gW.ravel()
        g[a:a + J * self.K] = (-(gc.sum(axis=1)) * v[None, :] / J).ravel()
        g[a + J * self.K:-1] = h.T @ c
        g[-1] = c.sum()
        return L, g


def init_unshared(J: int, K: int, m: int, rng) -> np.ndarray:
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    W = gen.standard_normal((J, K, m)) * math.sqrt(2.0 / m)
    v = gen.standard_normal(K) * math.sqrt(2.0 / K)
    return np.concatenate([W.ravel(), np.zeros(J * K), v, [0.0]])


@dataclass
class AblationConfig:
    J: int = 16
    m: int = 8
    n_train: int = 64
    n_test: int = 2048
    K: int = 256
    eta: float = 0.2
    epochs: int = 10000
    eval_every: int = 100
    E_total: float = 1.0
    seed: int = 0


@dataclass
class AblationRun:
    arch: str
    seed: int
    record: training.TrajectoryRecord

    @property
    def final_train(self) -> float:
        return self.record.curve[-1]["train_risk"]

    @property
    def final_test(self) -> float:
        return self.record.curve[-1]["test_risk"]


def ablation_data(cfg: AblationConfig):
    spec = ClusteredPatchSpec(cfg.J, cfg.m, E_total=cfg.E_total)
    base = RngStream(cfg.seed)
    train = clustered_patch_sample(spec, cfg.n_train, base.child("cluster_train"))
    test = clustered_patch_sample(spec, cfg.n_test, base.child("cluster_test"))
    return spec, train, test


def run_arch(arch: str, cfg: AblationConfig, train=None, test=None) -> AblationRun:
    if train is None:
        _, train, test = ablation_data(cfg)
    tc = training.TrainConfig(eta=cfg.eta, epochs=cfg.epochs, K=cfg.K, seed=cfg.seed,
                              arch="fcn" if arch == "fcn" else "lcn-ws",
                              sharpness_every=0, certificate=False, eval_every=cfg.eval_every)
    if arch == "lcn":
        fields = ReceptiveFields.disjoint(cfg.J * cfg.m, cfg.m)
        ker = UnsharedKernel(fields.extract(train.X), train.y, cfg.K)
        tker = UnsharedKernel(fields.extract(test.X), test.y, cfg.K)
        theta = init_unshared(cfg.J, cfg.K, cfg.m, RngStream(cfg.seed).child("init"))
        rec = training.run_gd(ker, theta, tc, tker)
        return AblationRun(arch, cfg.seed, rec)
    if arch not in ("fcn", "lcn-ws"):
        raise ValueError(f"unknown ablation architecture {arch!r}")
    fields = ReceptiveFields.disjoint(cfg.J * cfg.m, cfg.m)
    res = training.gd_train(fields, train, tc, test=test)
    return AblationRun(arch, cfg.seed, res.record)


def run_ablation(cfg: AblationConfig, archs=ABLATION_ARCHS) -> list[AblationRun]:
    _, train, test = ablation_data(cfg)
    return [run_arch(a, cfg, train, test) for a in archs]
