"""Forecast skill (valid prediction time) and invariant-measure (KL) metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import MinMaxScaler, minmax_apply, minmax_invert
from .dynamics import METHODS, SystemSpec, Trajectory, integrate_states
from .errors import ConfigurationError

KL_SMOOTHING = 1e-10
DEFAULT_BINS = 50


def normalized_error(pred, truth, sigma):
    """``sqrt(sum_j (pred_j - truth_j)^2 / sum_j sigma_j^2)``; rows are time steps."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    denom = np.sum(sigma**2)
    if not denom > 0:
        raise ConfigurationError("sum of sigma^2 must be positive")
    return np.sqrt(np.sum((pred - truth) ** 2, axis=-1) / denom)


def vpt(pred, truth, eps: float, dt: float, lyapunov_exponent: float, sigma=None) -> float:
    """Valid prediction time in Lyapunov times.

    ``Lambda * n * dt`` for the largest ``n`` with ``E_k <= eps`` for every
    ``k <= n``; zero if ``E_0`` already exceeds ``eps``. ``sigma`` defaults to
    the per-dimension std of ``truth``.
    """
    pred = np.asarray(getattr(pred, "states", pred), dtype=np.float64)
    truth = np.asarray(getattr(truth, "states", truth), dtype=np.float64)
    if pred.shape != truth.shape:
        raise ConfigurationError(f"shape mismatch {pred.shape} vs {truth.shape}")
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    if sigma is None:
        sigma = truth.std(axis=0)
    err = normalized_error(pred, truth, sigma)
    return vpt_from_errors(err, eps, dt, lyapunov_exponent)


def vpt_from_errors(err, eps: float, dt: float, lyapunov_exponent: float) -> float:
    ok = np.asarray(err) <= eps  # NaN (blow-up) compares False
    if not ok[0]:
        return 0.0
    bad = np.flatnonzero(~ok)
    n_star = ok.size - 1 if bad.size == 0 else bad[0] - 1
    return lyapunov_exponent * n_star * dt


# histograms -------------------------------------------------------------------


@dataclass(frozen=True)
class HistogramPDF:
    """Normalized histogram; ``edges`` is a tuple of per-axis edge arrays."""

    edges: tuple
    masses: np.ndarray

    def to_csv(self, path) -> None:
        if len(self.edges) != 1:
            raise ConfigurationError("CSV export is for 1-D histograms")
        e = self.edges[0]
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["left", "right", "mass"])
            for lo, hi, m in zip(e[:-1], e[1:], self.masses):
                writer.writerow([repr(float(lo)), repr(float(hi)), repr(float(m))])


def union_ranges(*sample_sets) -> np.ndarray:
    """Per-dimension (lo, hi) covering every finite value of all sample sets."""
    los, his = [], []
    for s in sample_sets:
        s = np.asarray(s, dtype=np.float64)
        s = s.reshape(-1, s.shape[-1])
        s = s[np.all(np.isfinite(s), axis=1)]
        if s.size:
            los.append(s.min(axis=0))
            his.append(s.max(axis=0))
    if not los:
        raise ConfigurationError("no finite samples")
    return np.stack([np.min(los, axis=0), np.max(his, axis=0)], axis=1)


def _edges(lo: float, hi: float, bins: int) -> np.ndarray:
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, bins + 1)


def histogram_pdf(samples, bins: int = DEFAULT_BINS, ranges=None) -> list[HistogramPDF]:
    """One normalized histogram per dimension of (N, D) samples.

    ``ranges`` is (D, 2); by default each dimension's own min/max. Pass
    :func:`union_ranges` of reference and prediction to compare them.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    x = x.reshape(-1, x.shape[-1])
    x = x[np.all(np.isfinite(x), axis=1)]
    if x.shape[0] < 1:
        raise ConfigurationError("need at least one finite sample")
    ranges = union_ranges(x) if ranges is None else np.asarray(ranges, dtype=np.float64)
    out = []
    for j in range(x.shape[1]):
        edges = _edges(ranges[j, 0], ranges[j, 1], bins)
        counts, _ = np.histogram(x[:, j], bins=edges)
        out.append(HistogramPDF((edges,), counts / counts.sum()))
    return out


def joint_histogram(a, b, bins: int = DEFAULT_BINS, ranges=None) -> HistogramPDF:
    a = np.ravel(a)
    b = np.ravel(b)
    keep = np.isfinite(a) & np.isfinite(b)
    a, b = a[keep], b[keep]
    if ranges is None:
        ranges = [[a.min(), a.max()], [b.min(), b.max()]]
    ex = _edges(ranges[0][0], ranges[0][1], bins)
    ey = _edges(ranges[1][0], ranges[1][1], bins)
    counts, _, _ = np.histogram2d(a, b, bins=[ex, ey])
    return HistogramPDF((ex, ey), counts / counts.sum())


def ks_gradient_pairs(fields, length: float) -> tuple[np.ndarray, np.ndarray]:
    """Pooled ``(u, u_x)`` samples of periodic KS fields, u_x by centered differences."""
    u = np.asarray(fields, dtype=np.float64)
    dx = length / u.shape[-1]
    ux = (np.roll(u, -1, axis=-1) - np.roll(u, 1, axis=-1)) / (2.0 * dx)
    return u.ravel(), ux.ravel()


def ks_joint_density(fields, length: float, bins: int = DEFAULT_BINS, ranges=None) -> HistogramPDF:
    return joint_histogram(*ks_gradient_pairs(fields, length), bins=bins, ranges=ranges)


def kl_divergence(p: HistogramPDF, q: HistogramPDF, smoothing: float = KL_SMOOTHING) -> float:
    """``sum p log(p/q)`` after adding ``smoothing`` to every bin and renormalizing."""
    if len(p.edges) != len(q.edges) or any(
        a.shape != b.shape or not np.array_equal(a, b) for a, b in zip(p.edges, q.edges)
    ):
        raise ConfigurationError("histograms have different bin edges")
    ps = p.masses.ravel() + smoothing
    qs = q.masses.ravel() + smoothing
    ps /= ps.sum()
    qs /= qs.sum()
    return float(max(0.0, np.sum(ps * np.log(ps / qs))))


def kl_per_dimension(reference, prediction, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Dimension-wise KL(reference || prediction) over shared union-range bins."""
    ranges = union_ranges(reference, prediction)
    ref_h = histogram_pdf(reference, bins, ranges)
    pred_h = histogram_pdf(prediction, bins, ranges)
    return np.array([kl_divergence(a, b) for a, b in zip(ref_h, pred_h)])


# model evaluation ---------------------------------------------------------------


@dataclass
class EvalReport:
    vpt: list
    vpt_mean: float
    vpt_std: float
    kl: list
    kl_mean: float
    starts: list
    blowups: list
    kl_valid: list
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def from_json(cls, path) -> "EvalReport":
        return cls(**json.loads(Path(path).read_text()))


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _as_states(x) -> np.ndarray:
    return np.asarray(getattr(x, "states", x), dtype=np.float64)


def free_runs(
    field_: Callable,
    starts_phys: np.ndarray,
    n_steps: int,
    dt: float,
    scaler: MinMaxScaler | None = None,
    solver: str = "dopri5",
    rtol: float = 1e-8,
    atol: float = 1e-8,
) -> np.ndarray:
    """Integrate the (scaled-space) field from physical start states.

    Returns physical-unit states of shape (n_steps+1, B, D); members that blow
    up are NaN from the blow-up onwards.
    """
    u0 = np.atleast_2d(starts_phys)
    if scaler is not None:
        u0 = minmax_apply(scaler, u0)
    out = integrate_states(field_, u0, n_steps, dt, solver, rtol, atol, on_blowup="mask")
    return out if scaler is None else minmax_invert(scaler, out)


def draw_starts(n_reference: int, horizon_steps: int, n_starts: int, seed: int) -> np.ndarray:
    available = n_reference - horizon_steps
    if available < 1:
        raise ConfigurationError("reference too short for the forecast horizon")
    rng = np.random.default_rng(seed)
    picks = rng.choice(available, size=min(n_starts, available), replace=False)
    return np.sort(picks)


def evaluate_model(
    field_: Callable,
    system: SystemSpec,
    reference,
    scaler: MinMaxScaler | None = None,
    n_starts: int = 30,
    horizon: float = 10.0,
    solver: str = "dopri5",
    seed: int = 0,
    kl_duration: float | None = 100.0,
    bins: int = DEFAULT_BINS,
    rtol: float = 1e-8,
    atol: float = 1e-8,
    eps: float | None = None,
) -> EvalReport:
    """VPT over ``n_starts`` seeded starts and the free-run invariant-measure KL.

    ``field_`` maps scaled states (B, D) to scaled tendencies; ``reference`` is
    the clean continuation beyond the training interval in physical units.
    ``horizon`` is in Lyapunov times and ``kl_duration`` in time units. Each
    start is integrated for the longer of the two; the KL compares the pooled
    free runs with the whole reference, dimension-wise, and reports the mean.
    """
    ref = _as_states(reference)
    dt = system.dt
    eps = system.vpt_threshold if eps is None else eps
    lam = system.lyapunov_exponent
    n_h = int(round(horizon / lam / dt))
    n_kl = 0 if not kl_duration else int(round(kl_duration / dt))
    starts = draw_starts(ref.shape[0], n_h, n_starts, seed)
    sigma = ref.std(axis=0)
    runs = free_runs(field_, ref[starts], max(n_h, n_kl, 1), dt, scaler, solver, rtol, atol)

    vpts, blowups = [], []
    for b, s in enumerate(starts):
        err = normalized_error(runs[: n_h + 1, b], ref[s : s + n_h + 1], sigma)
        vpts.append(vpt_from_errors(err, eps, dt, lam))
        blowups.append(bool(not np.all(np.isfinite(runs[:, b]))))
    kl_valid = [not bl for bl in blowups]
    if n_kl and any(kl_valid):
        pooled = runs[1 : n_kl + 1][:, np.asarray(kl_valid)]
        kl = kl_per_dimension(ref, pooled.reshape(-1, ref.shape[1]), bins)
        kl_mean = float(np.mean(kl))
    else:
        kl, kl_mean = np.array([]), math.nan
    vpts = np.asarray(vpts)
    meta = {
        "system": system.kind,
        "eps": eps,
        "lyapunov_exponent": lam,
        "horizon_lyapunov_times": horizon,
        "horizon_steps": n_h,
        "kl_duration": kl_duration,
        "bins": bins,
        "n_starts": int(starts.size),
        "solver": solver,
        "seed": seed,
    }
    return EvalReport(
        vpts.tolist(),
        float(vpts.mean()),
        float(vpts.std()),
        np.asarray(kl).tolist(),
        kl_mean,
        starts.tolist(),
        blowups,
        kl_valid,
        meta,
    )


@dataclass
class SweepResult:
    densities: dict  # solver -> list[HistogramPDF] (one per dimension, or one joint)
    samples: dict  # solver -> pooled physical samples (finite rows only)
    blowups: dict

    def pairwise_kl(self) -> dict:
        """Mean-over-dimensions KL(a || b) for every unordered solver pair (a before b)."""
        out = {}
        ok = [s for s in self.densities if self.densities[s] is not None]
        for a, b in combinations(ok, 2):
            out[(a, b)] = float(np.mean([kl_divergence(p, q) for p, q in zip(self.densities[a], self.densities[b])]))
        return out


def solver_sweep(
    field_: Callable,
    system: SystemSpec,
    start_states,
    scaler: MinMaxScaler | None = None,
    solvers: Sequence[str] = ("euler", "midpoint", "rk4", "bosh3", "dopri5"),
    duration: float = 100.0,
    bins: int = DEFAULT_BINS,
    joint: bool | None = None,
    rtol: float = 1e-8,
    atol: float = 1e-8,
) -> SweepResult:
    """Free-run densities of one model under several integrators.

    Fixed-step schemes take one step per data interval. All densities share
    bin edges (union of every solver's range) so they are directly comparable.
    For KS the density is the joint ``(u, u_x)`` histogram unless ``joint=False``.
    """
    for s in solvers:
        if s not in METHODS:
            raise ConfigurationError(f"unknown solver {s!r}")
    joint = system.kind == "KS" if joint is None else joint
    n = int(round(duration / system.dt))
    starts = np.atleast_2d(_as_states(start_states))
    samples, blowups = {}, {}
    for s in solvers:
        runs = free_runs(field_, starts, n, system.dt, scaler, s, rtol, atol)
        alive = np.all(np.isfinite(runs), axis=(0, 2))
        blowups[s] = int((~alive).sum())
        samples[s] = runs[1:, alive].reshape(-1, starts.shape[1]) if alive.any() else None
    valid = [x for x in samples.values() if x is not None and x.size]
    densities = {}
    if joint:
        length = system.params["length"]
        pairs = {s: ks_gradient_pairs(x, length) for s, x in samples.items() if x is not None}
        if pairs:
            lo_u = min(p[0].min() for p in pairs.values())
            hi_u = max(p[0].max() for p in pairs.values())
            lo_g = min(p[1].min() for p in pairs.values())
            hi_g = max(p[1].max() for p in pairs.values())
        for s in solvers:
            densities[s] = (
                None
                if s not in pairs
                else [joint_histogram(*pairs[s], bins=bins, ranges=[[lo_u, hi_u], [lo_g, hi_g]])]
            )
    else:
        ranges = union_ranges(*valid) if valid else None
        for s in solvers:
            densities[s] = None if samples[s] is None else histogram_pdf(samples[s], bins, ranges)
    return SweepResult(densities, samples, blowups)
