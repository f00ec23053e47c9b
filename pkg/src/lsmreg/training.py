"""Two-step network training on discrepancy-labeled data.

Step 1 fits the network to discrepancy-principle labels on a reduced
grid, in one of two modes:

* basic:    J = mean_t (alpha_net - alpha_label)^2
* informed: J = mean_t [ w1 J1 + w2 J2 ] with
              J1 = ((alpha_net - alpha_label) / alpha_norm)^2,
              J2 = (sum_j f_j(alpha_net, eta0))^2,
              w1 = alpha_norm,
              w2 = 1 / (sum_j df_j/dalpha + epsilon),
  where f_j is the per-mode discrepancy term.  The weights make the two
  per-sample gradient magnitudes 2|normalized misfit| and 2|sum_j f_j|,
  so both tasks train at comparable rates; weights are treated as
  constants during backpropagation.

Step 2 continues from the Step-1 model at a small learning rate,
minimizing the per-pattern Tikhonov objective

    residual^2 + alpha |g|^2  =  sum_j alpha |p_j|^2 / (alpha + D_j^2)

without labels, and stops by comparing rms variations of the normalized
training and validation trajectories (converged / overfitting /
underfitting branches).  Models are snapshotted each epoch while the
stop flag is down; the model returned is the last snapshot.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import network
from .errors import DimensionMismatch, NumericalFailure
from .forward import RhsLibrary
from .morozov import RegMap
from .network import OptimState, RegNet
from .spectral import Svd

__all__ = [
    "Dataset",
    "LossTrace",
    "StopConfig",
    "StopDecision",
    "TrainConfig",
    "TrainResult",
    "build_dataset",
    "loss_basic",
    "loss_informed",
    "loss_imaging",
    "validation_basic",
    "validation_informed",
    "stop_check",
    "train",
    "predict_map",
]

MODE_LEARNING_RATES = {"basic": 1e-5, "informed": 5e-6}
MODE_EPOCH1 = {"basic": 2000, "informed": 1000}
STEP2_LEARNING_RATE = 5e-8


# ---------------------------------------------------------------------------
# Dataset construction
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Dataset:
    """Training/validation split of projected patterns and labels.

    One orientation per sampling point is retained (the one minimizing
    the labeled solution norm); training points are every m-th grid point
    per axis and validation points are the complement of the original
    grid.  Features are projection moduli scaled into [0, 1] by u_scale;
    p2_* hold the unscaled squared moduli the losses need.
    """

    d: np.ndarray
    feat_train: np.ndarray
    p2_train: np.ndarray
    labels_train: np.ndarray
    train_indices: np.ndarray
    feat_val: np.ndarray
    p2_val: np.ndarray
    labels_val: np.ndarray
    val_indices: np.ndarray
    u_scale: float
    m: int
    selected_orientation: np.ndarray
    grid_shape: tuple[int, int]

    @property
    def n_train(self) -> int:
        return self.labels_train.shape[0]

    @property
    def n_val(self) -> int:
        return self.labels_val.shape[0]


def build_dataset(lib: RhsLibrary, regmap: RegMap, svd: Svd, m: int) -> Dataset:
    """Reduce a dense labeled map into train/validation samples.

    regmap must cover every library pattern; m is the per-axis
    downsampling factor of the training grid.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if regmap.size != lib.n_patterns or not np.array_equal(
        regmap.pattern_indices, np.arange(lib.n_patterns)
    ):
        raise DimensionMismatch("regmap does not cover the full library")
    if lib.patterns.shape[0] != svd.size:
        raise DimensionMismatch("library patterns do not match decomposition size")

    nx, ny = lib.grid_shape
    ns = lib.n_orientations
    n_points = lib.n_points

    coeffs = svd.U.conj().T @ lib.patterns  # (M, n_patterns)
    moduli = np.abs(coeffs).T  # (n_patterns, M)
    p2 = moduli * moduli

    # labeled solution norms, shaped (points, orientations)
    alphas = regmap.alphas.reshape(n_points, ns)
    d2 = svd.D * svd.D
    denom = (alphas[:, :, None] + d2[None, None, :]) ** 2
    gn2 = np.where(
        denom > 0.0,
        p2.reshape(n_points, ns, -1) * d2[None, None, :] / np.where(denom > 0.0, denom, 1.0),
        0.0,
    ).sum(axis=2)
    selected = np.argmin(gn2, axis=1)  # ties resolved to the smallest index

    iy, ix = np.divmod(np.arange(n_points), nx)
    train_mask = (ix % m == 0) & (iy % m == 0)
    point_ids = np.arange(n_points)
    pattern_of_point = point_ids * ns + selected

    train_n = pattern_of_point[train_mask]
    val_n = pattern_of_point[~train_mask]

    u_scale = float(np.max(moduli[train_n])) if train_n.size else 1.0
    if u_scale == 0.0:
        u_scale = 1.0

    return Dataset(
        d=svd.D.copy(),
        feat_train=moduli[train_n] / u_scale,
        p2_train=p2[train_n],
        labels_train=regmap.alphas[train_n].copy(),
        train_indices=train_n,
        feat_val=moduli[val_n] / u_scale,
        p2_val=p2[val_n],
        labels_val=regmap.alphas[val_n].copy(),
        val_indices=val_n,
        u_scale=u_scale,
        m=m,
        selected_orientation=selected,
        grid_shape=lib.grid_shape,
    )


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LossValue:
    J: float
    grads: network.Grads | None
    alphas: np.ndarray
    components: tuple[float, float] | None = None


def loss_basic(net: RegNet, dataset: Dataset) -> LossValue:
    """Mean squared label misfit and its parameter gradients."""
    alphas, cache = network.forward_batch(net, dataset.feat_train)
    resid = alphas - dataset.labels_train
    j = float(np.mean(resid * resid))
    dl = 2.0 * resid / resid.shape[0]
    grads = network.backward_batch(net, cache, dl)
    return LossValue(J=j, grads=grads, alphas=alphas)


def validation_basic(net: RegNet, dataset: Dataset) -> float:
    alphas, _ = network.forward_batch(net, dataset.feat_val)
    resid = alphas - dataset.labels_val
    return float(np.mean(resid * resid))


def _discrepancy_sums(alphas: np.ndarray, eta: float, d: np.ndarray, p2: np.ndarray):
    """Vectorized (sum_j f_j, sum_j df_j/dalpha) for a batch of alphas."""
    d2 = d * d
    base = alphas[:, None] + d2[None, :]
    s = np.sum((alphas[:, None] ** 2 - (eta * eta) * d2[None, :]) * p2 / base**2, axis=1)
    ds = np.sum(2.0 * d2[None, :] * (alphas[:, None] + eta * eta) * p2 / base**3, axis=1)
    return s, ds


def _alpha_norms(labels: np.ndarray, ref_labels: np.ndarray, alpha_norm: str) -> np.ndarray:
    if alpha_norm == "per_sample":
        return labels.copy()
    if alpha_norm == "global_max":
        return np.full_like(labels, float(np.max(ref_labels)) if ref_labels.size else 0.0)
    raise ValueError(f"unknown alpha_norm {alpha_norm!r}")


def _informed_terms(alphas, labels, p2, d, eta0, epsilon, alpha_norms):
    include = alpha_norms > 0.0
    s, ds = _discrepancy_sums(alphas, eta0, d, p2)
    w2 = 1.0 / (ds + epsilon)
    safe_norm = np.where(include, alpha_norms, 1.0)
    j1 = ((alphas - labels) / safe_norm) ** 2
    j2 = s * s
    return include, s, ds, w2, j1, j2, safe_norm


def loss_informed(net: RegNet, dataset: Dataset, eta0: float, epsilon: float = 1e-12,
                  alpha_norm: str = "global_max") -> LossValue:
    """Discrepancy-informed training loss with self-balancing weights.

    Samples whose normalization constant is zero are excluded from the
    loss and from the gradients.  Weights w1, w2 do not propagate
    gradients.
    """
    alphas, cache = network.forward_batch(net, dataset.feat_train)
    norms = _alpha_norms(dataset.labels_train, dataset.labels_train, alpha_norm)
    include, s, ds, w2, j1, j2, safe_norm = _informed_terms(
        alphas, dataset.labels_train, dataset.p2_train, dataset.d, eta0, epsilon, norms
    )
    n_eff = int(np.count_nonzero(include))
    if n_eff == 0:
        raise ValueError("no training samples with positive normalization")
    w1 = norms
    total = np.where(include, w1 * j1 + w2 * j2, 0.0)
    j = float(np.sum(total) / n_eff)
    j1_bar = float(np.sum(np.where(include, w1 * j1, 0.0)) / n_eff)
    j2_bar = float(np.sum(np.where(include, w2 * j2, 0.0)) / n_eff)
    dl = np.where(
        include,
        (w1 * 2.0 * (alphas - dataset.labels_train) / safe_norm**2 + w2 * 2.0 * s * ds) / n_eff,
        0.0,
    )
    grads = network.backward_batch(net, cache, dl)
    return LossValue(J=j, grads=grads, alphas=alphas, components=(j1_bar, j2_bar))


def validation_informed(net: RegNet, dataset: Dataset, eta0: float, epsilon: float = 1e-12,
                        alpha_norm: str = "global_max") -> float:
    """Validation counterpart of loss_informed (no gradients).

    The global normalization constant comes from the training labels so
    training and validation values stay on one scale.
    """
    alphas, _ = network.forward_batch(net, dataset.feat_val)
    norms = _alpha_norms(dataset.labels_val, dataset.labels_train, alpha_norm)
    include, _, _, w2, j1, j2, _ = _informed_terms(
        alphas, dataset.labels_val, dataset.p2_val, dataset.d, eta0, epsilon, norms
    )
    n_eff = int(np.count_nonzero(include))
    if n_eff == 0:
        return float("nan")
    return float(np.sum(np.where(include, norms * j1 + w2 * j2, 0.0)) / n_eff)


def _imaging_value_grads(net: RegNet, feats: np.ndarray, p2: np.ndarray, d: np.ndarray,
                         want_grads: bool):
    alphas, cache = network.forward_batch(net, feats)
    d2 = d * d
    base = alphas[:, None] + d2[None, :]
    per_sample = np.sum(alphas[:, None] * p2 / base, axis=1)
    j = float(np.mean(per_sample))
    if not want_grads:
        return j, None, alphas
    # d/dalpha of sum_j alpha p2 / (alpha + D^2) = sum_j p2 D^2 / (alpha + D^2)^2
    dj_dalpha = np.sum(p2 * d2[None, :] / base**2, axis=1) / alphas.shape[0]
    grads = network.backward_batch(net, cache, dj_dalpha)
    return j, grads, alphas


def loss_imaging(net: RegNet, dataset: Dataset, part: str = "train") -> LossValue:
    """Label-free Tikhonov objective, mean of residual^2 + alpha |g|^2.

    The per-pattern value collapses to sum_j alpha |p_j|^2 / (alpha+D_j^2);
    its alpha-derivative sum_j |p_j|^2 D_j^2 / (alpha+D_j^2)^2 is used in
    closed form.
    """
    if part == "train":
        feats, p2 = dataset.feat_train, dataset.p2_train
    elif part == "val":
        feats, p2 = dataset.feat_val, dataset.p2_val
    else:
        raise ValueError(f"unknown dataset part {part!r}")
    j, grads, alphas = _imaging_value_grads(net, feats, p2, dataset.d, want_grads=True)
    return LossValue(J=j, grads=grads, alphas=alphas)


def imaging_value(net: RegNet, dataset: Dataset, part: str) -> float:
    if part == "train":
        feats, p2 = dataset.feat_train, dataset.p2_train
    else:
        feats, p2 = dataset.feat_val, dataset.p2_val
    j, _, _ = _imaging_value_grads(net, feats, p2, dataset.d, want_grads=False)
    return j


# ---------------------------------------------------------------------------
# Loss trace and stop rule
# ---------------------------------------------------------------------------
CSV_COLUMNS = [
    "epoch", "step", "J", "V", "J_hat", "V_hat", "dJ_hat", "dV_hat",
    "rms_dJ", "rms_dV", "rho", "stop_flag", "reason",
]


@dataclass
class LossTrace:
    """Per-epoch loss records; step-2 rows carry the stop-rule metrics."""

    rows: list = field(default_factory=list)
    epoch1: int | None = None
    _norm_j: float = math.nan
    _norm_v: float = math.nan
    _step1_norm_j: float = math.nan
    _step1_norm_v: float = math.nan

    def add_step1(self, epoch: int, j: float, v: float) -> None:
        if not self.rows:
            self._step1_norm_j = j if j != 0 else 1.0
            self._step1_norm_v = v if v != 0 else 1.0
        self.rows.append({
            "epoch": epoch, "step": 1, "J": j, "V": v,
            "J_hat": j / self._step1_norm_j, "V_hat": v / self._step1_norm_v,
            "dJ_hat": math.nan, "dV_hat": math.nan,
            "rms_dJ": math.nan, "rms_dV": math.nan, "rho": math.nan,
            "stop_flag": 0, "reason": "",
        })

    def begin_step2(self, epoch: int, j: float, v: float) -> None:
        """Record the Step-2 baseline; subsequent rows normalize by it."""
        self.epoch1 = epoch
        self._norm_j = j if j != 0 else 1.0
        self._norm_v = v if v != 0 else 1.0
        self.rows.append({
            "epoch": epoch, "step": 2, "J": j, "V": v,
            "J_hat": 1.0, "V_hat": 1.0,
            "dJ_hat": math.nan, "dV_hat": math.nan,
            "rms_dJ": math.nan, "rms_dV": math.nan, "rho": math.nan,
            "stop_flag": 0, "reason": "",
        })

    def add_step2(self, epoch: int, j: float, v: float) -> None:
        if self.epoch1 is None:
            raise ValueError("begin_step2 must be called first")
        prev = self.rows[-1]
        j_hat = j / self._norm_j
        v_hat = v / self._norm_v
        self.rows.append({
            "epoch": epoch, "step": 2, "J": j, "V": v,
            "J_hat": j_hat, "V_hat": v_hat,
            "dJ_hat": j_hat - prev["J_hat"], "dV_hat": v_hat - prev["V_hat"],
            "rms_dJ": math.nan, "rms_dV": math.nan, "rho": math.nan,
            "stop_flag": 0, "reason": "",
        })

    def step2_deltas(self, t_lo: int, t_hi: int) -> tuple[np.ndarray, np.ndarray]:
        """Delta entries for step-2 epochs tau with t_lo <= tau < t_hi."""
        dj, dv = [], []
        for row in self.rows:
            if row["step"] == 2 and t_lo <= row["epoch"] < t_hi and not math.isnan(row["dJ_hat"]):
                dj.append(row["dJ_hat"])
                dv.append(row["dV_hat"])
        return np.asarray(dj), np.asarray(dv)

    def annotate_last(self, decision: "StopDecision") -> None:
        row = self.rows[-1]
        row["rms_dJ"] = decision.rms_dj
        row["rms_dV"] = decision.rms_dv
        row["rho"] = decision.rho
        row["stop_flag"] = int(decision.stop)
        row["reason"] = decision.reason if decision.stop else ""

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in self.rows:
                writer.writerow([
                    row["epoch"], row["step"],
                    *(format(row[c], ".17g") for c in CSV_COLUMNS[2:11]),
                    row["stop_flag"], row["reason"],
                ])


@dataclass(frozen=True)
class StopConfig:
    """Thresholds of the stop-training rule.

    Ratio bounds are (1/sigma_r, sigma_r): a variation ratio below the
    lower bound flags overfitting, above the upper bound underfitting.
    """

    sigma_a: float = 1e-4
    sigma_r: float = 5.0
    n_rms: int = 10000
    min_window: int = 10

    def __post_init__(self):
        if self.sigma_a <= 0 or self.sigma_r <= 1:
            raise ValueError("sigma_a must be > 0 and sigma_r > 1")


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    reason: str
    rms_dj: float = math.nan
    rms_dv: float = math.nan
    rho: float = math.nan


def stop_check(trace: LossTrace, cfg: StopConfig, t: int) -> StopDecision:
    """Evaluate the stop rule at epoch t of Step 2.

    rms of normalized loss variations is taken over the window
    [max(t - n_rms, epoch1), t); ratio branches are tested before the
    absolute branches, so a flat validation trace with an active training
    loss reports overfitting.  Returns a no-decision ("not_ready") before
    min_window epochs have accumulated or when the window holds fewer
    than two variation entries.
    """
    if trace.epoch1 is None or t <= trace.epoch1 + cfg.min_window:
        return StopDecision(stop=False, reason="not_ready")
    t_lo = max(t - cfg.n_rms, trace.epoch1)
    dj, dv = trace.step2_deltas(t_lo, t)
    if dj.size < 2:
        return StopDecision(stop=False, reason="not_ready")
    rms_dj = float(np.sqrt(np.mean(dj * dj)))
    rms_dv = float(np.sqrt(np.mean(dv * dv)))
    if rms_dj == 0.0:
        rho = math.inf if rms_dv > 0.0 else math.nan
    else:
        rho = rms_dv / rms_dj
    lo, hi = 1.0 / cfg.sigma_r, cfg.sigma_r
    if not math.isnan(rho) and rho < lo:
        return StopDecision(True, "overfitting", rms_dj, rms_dv, rho)
    if not math.isnan(rho) and rho > hi:
        return StopDecision(True, "underfitting", rms_dj, rms_dv, rho)
    if rms_dv < cfg.sigma_a:
        return StopDecision(True, "converged_validation", rms_dj, rms_dv, rho)
    if rms_dj < cfg.sigma_a:
        return StopDecision(True, "converged_training", rms_dj, rms_dv, rho)
    return StopDecision(False, "none", rms_dj, rms_dv, rho)


# ---------------------------------------------------------------------------
# Two-step trainer
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class TrainConfig:
    """Schedule for both training steps; None fields use mode defaults."""

    mode: str = "informed"
    epoch1: int | None = None
    max_epochs2: int = 20000
    lr1: float | None = None
    lr2: float = STEP2_LEARNING_RATE
    eta0: float = 0.3
    epsilon: float = 1e-12
    alpha_norm: str = "global_max"
    stop: StopConfig = field(default_factory=StopConfig)

    def resolved_epoch1(self) -> int:
        return self.epoch1 if self.epoch1 is not None else MODE_EPOCH1[self.mode]

    def resolved_lr1(self) -> float:
        return self.lr1 if self.lr1 is not None else MODE_LEARNING_RATES[self.mode]


@dataclass
class TrainResult:
    net: RegNet
    step1_net: RegNet
    trace: LossTrace
    stop_epoch: int | None
    stop_reason: str


def _step1_losses(net, dataset, cfg):
    if cfg.mode == "basic":
        value = loss_basic(net, dataset)
        v = validation_basic(net, dataset)
    elif cfg.mode == "informed":
        value = loss_informed(net, dataset, cfg.eta0, cfg.epsilon, cfg.alpha_norm)
        v = validation_informed(net, dataset, cfg.eta0, cfg.epsilon, cfg.alpha_norm)
    else:
        raise ValueError(f"unknown training mode {cfg.mode!r}")
    return value, v


def train(net: RegNet, dataset: Dataset, cfg: TrainConfig) -> TrainResult:
    """Run Step 1 (labeled) and Step 2 (label-free) full-batch training.

    Step 2 snapshots the model each epoch while the stop flag is down
    and returns the last snapshot once it fires; with max_epochs2 = 0 the
    Step-1 model is returned directly.
    """
    trace = LossTrace()
    epoch1 = cfg.resolved_epoch1()

    optim1 = OptimState.for_net(net, cfg.resolved_lr1())
    for t in range(1, epoch1 + 1):
        value, v = _step1_losses(net, dataset, cfg)
        if not math.isfinite(value.J):
            raise NumericalFailure(f"training loss diverged at epoch {t}")
        trace.add_step1(t, value.J, v)
        network.step(net, optim1, value.grads)
    step1_net = net.copy()

    if cfg.max_epochs2 <= 0:
        return TrainResult(net=step1_net, step1_net=step1_net, trace=trace,
                           stop_epoch=None, stop_reason="step2_disabled")

    optim2 = OptimState.for_net(net, cfg.lr2)
    value = loss_imaging(net, dataset, "train")
    v = imaging_value(net, dataset, "val")
    trace.begin_step2(epoch1, value.J, v)
    saved = net.copy()
    stop_epoch = None
    stop_reason = "max_epochs2_reached"

    for t in range(epoch1 + 1, epoch1 + cfg.max_epochs2 + 1):
        network.step(net, optim2, value.grads)
        value = loss_imaging(net, dataset, "train")
        v = imaging_value(net, dataset, "val")
        if not math.isfinite(value.J):
            raise NumericalFailure(f"imaging loss diverged at epoch {t}")
        trace.add_step2(t, value.J, v)
        decision = stop_check(trace, cfg.stop, t)
        trace.annotate_last(decision)
        if decision.stop:
            stop_epoch = t
            stop_reason = decision.reason
            break
        saved = net.copy()
    else:
        saved = net.copy()

    return TrainResult(net=saved, step1_net=step1_net, trace=trace,
                       stop_epoch=stop_epoch, stop_reason=stop_reason)


def predict_map(net: RegNet, svd: Svd, lib: RhsLibrary, source: str = "net_step1") -> RegMap:
    """Dense regularization map from one forward pass over the library."""
    if lib.patterns.shape[0] != svd.size:
        raise DimensionMismatch("library patterns do not match decomposition size")
    feats = np.abs(svd.U.conj().T @ lib.patterns).T / net.u_scale
    alphas, _ = network.forward_batch(net, feats)
    indices = np.arange(lib.n_patterns)
    pts = indices // lib.n_orientations
    orient = indices % lib.n_orientations
    return RegMap(
        alphas=alphas,
        eta=math.nan,
        flags=np.zeros(lib.n_patterns, dtype=bool),
        pattern_indices=indices,
        xy=lib.grid[pts],
        phi=lib.angles[orient],
        grid_shape=lib.grid_shape,
        n_orientations=lib.n_orientations,
        source=source,
    )
