"""Full-batch gradient descent with sharpness telemetry, risk estimates and slope fits."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import io, model, stability
from .model import Dataset, ModelParams, ReceptiveFields
from .rng import RngStream

ARCHS = ("lcn-ws", "fcn")
TRAJECTORY_HEADER = ["epoch", "loss", "risk", "sharpness", "beos", "cert_lhs", "cert_rhs"]
CURVE_HEADER = ["epoch", "train_risk", "test_risk"]
DIVERGENCE_LOSS = 1e12


@dataclass
class TrainConfig:
    eta: float = 0.2
    epochs: int = 1000
    K: int = 64
    seed: int = 0
    arch: str = "lcn-ws"
    sharpness_every: int = 100
    sharpness_tol: float = 1e-8
    sharpness_max_iter: int = 1000
    warm_start: bool = True
    certificate: bool = True
    eval_every: int = 0

    def __post_init__(self):
        if not (0.0 < self.eta < 2.0):
            raise ValueError(f"eta must lie in (0, 2), got {self.eta}")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.K < 0:
            raise ValueError("K must be non-negative")
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.sharpness_every < 0 or self.eval_every < 0:
            raise ValueError("telemetry periods must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrajectoryRecord:
    rows: list[dict] = field(default_factory=list)
    curve: list[dict] = field(default_factory=list)
    eta: float = 0.2
    diverged: bool = False
    diagnostic: str = ""

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self, path):
        rows = ([r[h] for h in TRAJECTORY_HEADER] for r in self.rows)
        return io.write_csv(path, TRAJECTORY_HEADER, rows)

    def curve_to_csv(self, path):
        return io.write_csv(path, CURVE_HEADER, ([r[h] for h in CURVE_HEADER] for r in self.curve))

    def late_sharpness(self, fraction: float = 0.2) -> np.ndarray:
        """Sharpness values over the final ``fraction`` of telemetry points."""
        s = self.column("sharpness")
        k = max(1, int(math.ceil(fraction * len(s))))
        return s[-k:]


@dataclass
class TrainResult:
    params: ModelParams
    record: TrajectoryRecord
    fields: ReceptiveFields


def arch_fields(arch: str, fields: ReceptiveFields | None, d: int) -> ReceptiveFields:
    if arch == "fcn":
        return ReceptiveFields.full(d)
    if fields is None:
        raise ValueError("lcn-ws needs receptive fields")
    return fields


class SharedKernel:
    """Loss and gradient of the weight-shared model on a fixed patch tensor, on flat vectors."""

    def __init__(self, P: np.ndarray, y: np.ndarray, K: int):
        self.n, self.J, self.m = P.shape
        self.P2 = np.ascontiguousarray(P.reshape(self.n * self.J, self.m))
        self.P = P
        self.y = y
        self.K = K
        self.size = model.param_count(K, self.m)

    def split(self, theta):
        K, m = self.K, self.m
        Km = K * m
        return theta[:Km].reshape(K, m), theta[Km:Km + K], theta[Km + K:Km + 2 * K], theta[-1]

    def outputs(self, theta) -> np.ndarray:
        W, b, v, beta = self.split(theta)
        pre = self.P2 @ W.T
        pre -= b
        np.maximum(pre, 0.0, out=pre)
        h = pre.reshape(self.n, self.J, self.K).mean(axis=1)
        return h @ v + beta

    def loss_grad(self, theta):
        W, b, v, beta = self.split(theta)
        n, J, K = self.n, self.J, self.K
        pre = self.P2 @ W.T
        pre -= b
        gate = pre > 0
        np.maximum(pre, 0.0, out=pre)
        h = pre.reshape(n, J, K).mean(axis=1)
        r = h @ v + beta - self.y
        L = 0.5 * float(r @ r) / n
        c = r / n
        gc = gate.reshape(n, J, K) * c[:, None, None]
        gc = gc.reshape(n * J, K)
        g = np.empty_like(theta)
        Km = K * self.m
        g[:Km] = (v[:, None] * (gc.T @ self.P2) / J).ravel()
        g[Km:Km + K] = -v * gc.sum(axis=0) / J
        g[Km + K:Km + 2 * K] = h.T @ c
        g[-1] = c.sum()
        return L, g


def _init(cfg: TrainConfig, m: int) -> ModelParams:
    return model.init_params(cfg.K, m, RngStream(cfg.seed).child("init"))


def run_gd(ker, theta: np.ndarray, cfg: TrainConfig, test_ker=None, telemetry=None) -> TrajectoryRecord:
    """Generic full-batch GD on a kernel exposing ``loss_grad`` and ``outputs``.

    ``telemetry(epoch, L, theta)`` returns a trajectory row; it is called at
    epoch 0, every ``cfg.sharpness_every`` epochs and at the final epoch.
    ``theta`` is updated in place.
    """
    rec = TrajectoryRecord(eta=cfg.eta)
    every = cfg.sharpness_every
    for epoch in range(cfg.epochs + 1):
        L, g = ker.loss_grad(theta)
        if not math.isfinite(L) or L > DIVERGENCE_LOSS:
            rec.diverged = True
            rec.diagnostic = f"loss {L:.6g} at epoch {epoch} exceeds {DIVERGENCE_LOSS:g}"
            rec.rows.append({"epoch": epoch, "loss": L, "risk": 2 * L, "sharpness": math.nan,
                             "beos": 0, "cert_lhs": math.nan, "cert_rhs": math.nan})
            break
        last = epoch == cfg.epochs
        if telemetry is not None and ((every and epoch % every == 0) or last):
            rec.rows.append(telemetry(epoch, L, theta))
        if cfg.eval_every and (epoch % cfg.eval_every == 0 or last):
            te = math.nan
            if test_ker is not None:
                r = test_ker.outputs(theta) - test_ker.y
                te = float(r @ r) / len(r)
            rec.curve.append({"epoch": epoch, "train_risk": 2 * L, "test_risk": te})
        if last:
            break
        theta -= cfg.eta * g
    return rec


def gd_train(fields: ReceptiveFields | None, dataset: Dataset, config: TrainConfig,
             params: ModelParams | None = None, test: Dataset | None = None) -> TrainResult:
    """Run ``theta <- theta - eta grad L`` for ``config.epochs`` steps.

    Telemetry (sharpness, BEoS flag and optionally the certificate sides) is
    taken at epoch 0, every ``sharpness_every`` epochs and at the final
    epoch. ``eval_every`` additionally logs train and test risk. A loss above
    1e12 or a non-finite loss stops the run and marks the record diverged.
    """
    cfg = config
    fields = arch_fields(cfg.arch, fields, dataset.d)
    if params is None:
        params = _init(cfg, fields.m)
    ker = SharedKernel(fields.extract(dataset.X), dataset.y, params.K)
    test_ker = SharedKernel(fields.extract(test.X), test.y, params.K) if test is not None else None
    cloud = stability.PatchCloud(ker.P2, source="dataset")
    R = float(dataset.R)
    state = {"v": None}

    def telemetry(epoch, L, theta):
        p = ModelParams.unflatten(theta, ker.K, ker.m)
        lam = math.nan
        if cfg.sharpness_every:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", model.ConvergenceWarning)
                res = model.sharpness(p, fields, dataset, tol=cfg.sharpness_tol,
                                      max_iter=cfg.sharpness_max_iter, seed=cfg.seed,
                                      v0=state["v"] if cfg.warm_start else None, full_output=True)
            lam, state["v"] = res.value, res.vector
        row = {"epoch": epoch, "loss": L, "risk": 2 * L, "sharpness": lam,
               "beos": int(lam <= 2.0 / cfg.eta) if math.isfinite(lam) else 0,
               "cert_lhs": math.nan, "cert_rhs": math.nan}
        if cfg.certificate and math.isfinite(lam):
            row["cert_lhs"] = stability.weighted_path_norm(p, cloud)
            row["cert_rhs"] = stability.certificate_rhs(lam, L, R)
        return row

    theta = params.flatten()
    rec = run_gd(ker, theta, cfg, test_ker, telemetry)
    final = ModelParams.unflatten(theta, ker.K, ker.m) if not rec.diverged else params
    return TrainResult(final, rec, fields)


# --------------------------------------------------------------------------
# risk estimates


def estimate_excess(params: ModelParams, fields: ReceptiveFields, test: Dataset) -> float:
    """Monte-Carlo excess risk (1/N) sum (f(x) - f_true(x))^2 over a test set carrying teacher values."""
    if test.f_true is None:
        raise ValueError("test set has no stored teacher values")
    diff = model.predict(params, fields, test.X) - test.f_true
    return float(np.mean(diff * diff))


@dataclass
class GapEstimate:
    excess: float
    sigma2: float
    train_risk: float
    signed: float
    gap: float


def gap_estimate(params: ModelParams, fields: ReceptiveFields, train: Dataset, test: Dataset,
                 sigma: float) -> GapEstimate:
    excess = estimate_excess(params, fields, test)
    risk = model.plugin_risk(params, fields, train)
    signed = excess + sigma * sigma - risk
    return GapEstimate(excess, sigma * sigma, risk, signed, abs(signed))


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    n_points: int
    dropped: int


def slope_fit(pairs) -> SlopeFit:
    """Least-squares line through (log n, log gap); non-positive gaps are dropped with a warning."""
    pairs = [(float(n), float(g)) for n, g in pairs]
    keep = [(n, g) for n, g in pairs if g > 0 and n > 0 and math.isfinite(g)]
    dropped = len(pairs) - len(keep)
    if dropped:
        warnings.warn(f"dropped {dropped} non-positive or non-finite gap(s) from the slope fit")
    if len({n for n, _ in keep}) < 2:
        raise ValueError("slope fit needs at least two distinct n with positive gaps")
    x = np.log([n for n, _ in keep])
    y = np.log([g for _, g in keep])
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    return SlopeFit(float(slope), float(intercept), len(keep), dropped)
