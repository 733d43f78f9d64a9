"""Strong (rollout) loss, the combined weak-penalty objective, and the trainer."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import (
    OptimizerState,
    ParamSet,
    Tensor,
    adam_step,
    constant,
    grad,
    init_params,
    mlp_apply,
)
from .data import (
    MinMaxScaler,
    SubdomainLayout,
    WindowSet,
    make_subdomains,
    minmax_apply,
    minmax_fit,
    sliding_windows,
)
from .dynamics import METHODS, Trajectory, rk_step
from .errors import ConfigurationError, TrainingError
from .weakform import SubdomainWeights, weak_loss, weak_loss_indexed, weak_weights

log = logging.getLogger(__name__)

LOSS_MODES = ("strong", "weak", "wp")
BLOWUP_LOSS = 1e10


@dataclass
class TrainConfig:
    loss_mode: str = "wp"
    rollout_T: int = 1
    lam: float = 0.5
    subdomain_size: int = 60
    n_subdomains: int | None = None  # None: half the series length
    p: int = 16
    batch_size: int = 1024
    lr_init: float = 0.02
    hidden: tuple = (200, 200)
    scheduler_factor: float = 0.5
    scheduler_patience: int | None = None  # None: 200 (weak/wp) or 10 (strong)
    min_lr: float = 1e-6
    max_epochs: int = 20_000
    early_stop_patience: int | None = None  # None: 1000 (weak/wp) or 30 (strong)
    val_fraction: float = 0.1
    solver: str = "rk4"
    seed: int = 0
    max_wall_time: float | None = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.loss_mode not in LOSS_MODES:
            raise ConfigurationError(f"loss_mode must be one of {LOSS_MODES}")
        if self.loss_mode == "strong" and self.rollout_T < 2:
            raise ConfigurationError("strong mode needs rollout_T >= 2")
        if self.loss_mode == "wp" and not 1 <= self.rollout_T <= 25:
            raise ConfigurationError("wp mode needs 1 <= rollout_T <= 25")
        if self.lam < 0:
            raise ConfigurationError("lam must be nonnegative")
        if self.solver not in METHODS:
            raise ConfigurationError(f"solver must be one of {METHODS}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigurationError("batch_size and max_epochs must be positive")
        if not 0 < self.val_fraction < 1:
            raise ConfigurationError("val_fraction must be in (0, 1)")

    @property
    def uses_weak(self) -> bool:
        return self.loss_mode in ("weak", "wp")

    @property
    def uses_strong(self) -> bool:
        return self.loss_mode == "strong" or (self.loss_mode == "wp" and self.lam > 0)

    @property
    def lr_patience(self) -> int:
        if self.scheduler_patience is not None:
            return self.scheduler_patience
        return 10 if self.loss_mode == "strong" else 200

    @property
    def stop_patience(self) -> int:
        if self.early_stop_patience is not None:
            return self.early_stop_patience
        return 30 if self.loss_mode == "strong" else 1000

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)


# losses ---------------------------------------------------------------------


def is_blowup(loss: Tensor) -> bool:
    return not np.isfinite(loss.data) or float(loss.data) >= BLOWUP_LOSS


def strong_loss(params: ParamSet, windows, dt: float, solver: str = "rk4", T: int | None = None) -> Tensor:
    """Rollout MSE ``1/T sum_n ||u_n - u_hat_n||^2`` averaged over the batch.

    ``windows`` is (B, >=T+1, D): row 0 is the observed initial state, which the
    rollout reproduces exactly, so only the T transitions after it contribute.
    Non-finite rollouts return a constant sentinel of value ``BLOWUP_LOSS``.
    """
    w = np.asarray(getattr(windows, "segments", windows), dtype=np.float64)
    if w.ndim == 2:
        w = w[None]
    T = w.shape[1] - 1 if T is None else int(T)
    if T < 1 or w.shape[1] < T + 1:
        raise ConfigurationError(f"windows of length {w.shape[1]} cannot support {T} rollout steps")

    def field_(u):
        return mlp_apply(params, u)

    y = constant(w[:, 0])
    total = None
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(1, T + 1):
            y = rk_step(field_, y, dt, solver)
            if not np.all(np.isfinite(y.data)):
                return constant(BLOWUP_LOSS)
            term = (y - w[:, n]).square().sum(axis=1).mean()
            total = term if total is None else total + term
        return total * (1.0 / T)


def _weak_term(params, weak_batch, weights):
    if isinstance(weak_batch, tuple):
        series, index = weak_batch
        return weak_loss_indexed(params, series, index, weights)
    return weak_loss(params, weak_batch, weights)


def combined_loss(
    params: ParamSet,
    weak_batch,
    strong_batch,
    weights: SubdomainWeights,
    lam: float,
    T: int,
    dt: float,
    solver: str = "rk4",
) -> Tensor:
    """``weak + lam * strong``.

    ``weak_batch`` is either (B, M, D) node states or a ``(series, index)``
    pair; ``strong_batch`` is (B, >=T+1, D) windows.
    """
    if lam < 0:
        raise ConfigurationError("lam must be nonnegative")
    weak = _weak_term(params, weak_batch, weights)
    if lam == 0:
        return weak
    strong = strong_loss(params, strong_batch, dt, solver, T)
    if is_blowup(strong):
        return strong
    return weak + lam * strong


# data preparation -------------------------------------------------------------


@dataclass
class PreparedData:
    series: np.ndarray
    scaler: MinMaxScaler
    dt: float
    layout_train: SubdomainLayout | None
    layout_val: SubdomainLayout | None
    windows_train: WindowSet | None
    windows_val: WindowSet | None
    weights: SubdomainWeights | None


def _split(n: int, val_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    n_val = max(1, int(round(n * val_fraction)))
    if n - n_val < 1:
        raise ConfigurationError("not enough samples for a train/validation split")
    return np.arange(n - n_val), np.arange(n - n_val, n)


def prepare_data(traj: Trajectory, config: TrainConfig, scaler: MinMaxScaler | None = None) -> PreparedData:
    """Scale, build subdomains and/or rollout windows, split off the last 10%."""
    scaler = scaler or minmax_fit(traj.states)
    series = minmax_apply(scaler, traj.states)
    n = series.shape[0]
    layout_tr = layout_val = win_tr = win_val = weights = None
    if config.uses_weak:
        k = config.n_subdomains or n // 2
        layout = make_subdomains(n, config.subdomain_size, k, traj.dt)
        tr, va = _split(layout.count, config.val_fraction)
        layout_tr, layout_val = layout.subset(tr), layout.subset(va)
        weights = weak_weights(layout.nodes, config.p, layout.length)
    if config.loss_mode == "strong" or config.loss_mode == "wp":
        windows = sliding_windows(series, config.rollout_T + 1, 1)
        tr, va = _split(len(windows), config.val_fraction)
        win_tr, win_val = windows.subset(tr), windows.subset(va)
    return PreparedData(series, scaler, traj.dt, layout_tr, layout_val, win_tr, win_val, weights)


# training loop ----------------------------------------------------------------


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = -1
    best_val: float = math.inf
    wall_time: float = 0.0
    blowups: int = 0
    params: ParamSet | None = None

    def write_history(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for i, (a, b, c) in enumerate(zip(self.train_loss, self.val_loss, self.lr)):
                writer.writerow([i + 1, repr(a), repr(b), repr(c)])

    def summary(self) -> dict:
        return {
            "epochs": len(self.val_loss),
            "stopped_epoch": self.stopped_epoch,
            "best_epoch": self.best_epoch,
            "best_val": self.best_val,
            "wall_time": self.wall_time,
            "blowups": self.blowups,
        }


def validation_loss(params: ParamSet, data: PreparedData, config: TrainConfig) -> float:
    """Training objective on the held-out tail (whole set, no batching)."""
    total = 0.0
    if config.uses_weak:
        index = data.layout_val.node_indices()
        total += float(weak_loss_indexed(params, data.series, index, data.weights).data)
    if config.loss_mode == "strong":
        total += float(strong_loss(params, data.windows_val.segments, data.dt, config.solver).data)
    elif config.loss_mode == "wp" and config.lam > 0:
        total += config.lam * float(strong_loss(params, data.windows_val.segments, data.dt, config.solver).data)
    return total


def _batches(order: np.ndarray, size: int):
    for i in range(0, order.size, size):
        yield order[i : i + size]


def train(config: TrainConfig, dataset, params: ParamSet | None = None):
    """Minibatch Adam with reduce-on-plateau and early stopping.

    ``dataset`` is a :class:`PreparedData` or a (noisy) :class:`Trajectory`.
    Returns the best-validation parameters and the :class:`TrainReport`.
    Deterministic for a given seed unless ``max_wall_time`` cuts the run short.
    """
    data = dataset if isinstance(dataset, PreparedData) else prepare_data(dataset, config)
    dim = data.series.shape[1]
    if params is None:
        params = init_params([dim, *config.hidden, dim], config.seed)
    elif params.in_dim != dim:
        raise ConfigurationError("initial params do not match the data dimension")
    seq = np.random.SeedSequence(config.seed)
    rng_main, rng_strong = (np.random.default_rng(s) for s in seq.spawn(2))
    state = OptimizerState.fresh(params, config.lr_init)
    report = TrainReport()
    best_params = params
    sched_best, bad_epochs = math.inf, 0
    t_start = time.perf_counter()

    if config.uses_weak:
        n_items = data.layout_train.count
        all_index = data.layout_train.node_indices()
    else:
        n_items = len(data.windows_train)

    for epoch in range(1, config.max_epochs + 1):
        order = rng_main.permutation(n_items)
        losses, blown, n_batches = [], 0, 0
        for batch in _batches(order, config.batch_size):
            n_batches += 1
            tracked = params.track()
            if config.loss_mode == "strong":
                loss = strong_loss(tracked, data.windows_train.segments[batch], data.dt, config.solver)
            elif config.loss_mode == "weak":
                loss = weak_loss_indexed(tracked, data.series, all_index[batch], data.weights)
            else:
                n_win = len(data.windows_train)
                pick = rng_strong.choice(n_win, size=min(config.batch_size, n_win), replace=False)
                loss = combined_loss(
                    tracked,
                    (data.series, all_index[batch]),
                    data.windows_train.segments[pick],
                    data.weights,
                    config.lam,
                    config.rollout_T,
                    data.dt,
                    config.solver,
                )
            if is_blowup(loss):
                blown += 1
                continue
            g = grad(loss, tracked)
            params, state = adam_step(params, g, state)
            losses.append(float(loss.data))
        report.blowups += blown
        if blown > 0.01 * n_batches and blown > 0:
            report.params = best_params
            report.wall_time = time.perf_counter() - t_start
            raise TrainingError(f"{blown}/{n_batches} rollout batches blew up in epoch {epoch}", report)

        val = validation_loss(params, data, config)
        report.train_loss.append(float(np.mean(losses)) if losses else math.nan)
        report.val_loss.append(val)
        report.lr.append(state.lr)
        report.stopped_epoch = epoch
        if not np.isfinite(val) or val >= BLOWUP_LOSS:
            report.params = best_params
            report.wall_time = time.perf_counter() - t_start
            raise TrainingError(f"validation loss diverged at epoch {epoch}", report)
        if val < report.best_val:
            report.best_val, report.best_epoch, best_params = val, epoch, params
        # reduce-on-plateau with a relative improvement threshold
        if val < sched_best * (1 - 1e-4):
            sched_best, bad_epochs = val, 0
        else:
            bad_epochs += 1
            if bad_epochs > config.lr_patience:
                state.lr = max(config.min_lr, state.lr * config.scheduler_factor)
                bad_epochs = 0
        if epoch - report.best_epoch > config.stop_patience:
            log.info("early stop at epoch %d (best %d)", epoch, report.best_epoch)
            break
        if config.max_wall_time is not None and time.perf_counter() - t_start > config.max_wall_time:
            log.info("wall-time budget reached at epoch %d", epoch)
            break
        if epoch % 100 == 0:
            log.debug("epoch %d val %.3e lr %.2e", epoch, val, state.lr)

    report.params = best_params
    report.wall_time = time.perf_counter() - t_start
    return best_params, report
