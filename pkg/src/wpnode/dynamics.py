"""Benchmark systems, time integrators and reference data generation."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigurationError, IntegrationError

SYSTEM_KINDS = ("L63", "L96", "KS")
DEFAULT_BURN_IN = {"L63": 1000, "L96": 1000, "KS": 2000}


@dataclass(frozen=True)
class SystemSpec:
    kind: str
    params: dict
    dt: float
    lyapunov_exponent: float
    vpt_threshold: float

    def __post_init__(self):
        if self.kind not in SYSTEM_KINDS:
            raise ConfigurationError(f"unknown system kind {self.kind!r}")
        if self.dt <= 0 or self.lyapunov_exponent <= 0 or self.vpt_threshold <= 0:
            raise ConfigurationError("dt, lyapunov_exponent and vpt_threshold must be positive")
        if self.kind == "L96" and self.params["d"] < 4:
            raise ConfigurationError("Lorenz-96 needs d >= 4")
        if self.kind == "KS" and (self.params["nx"] % 2 or self.params["length"] <= 0):
            raise ConfigurationError("KS needs an even number of modes and a positive length")

    @classmethod
    def lorenz63(cls, sigma=10.0, rho=28.0, beta=8.0 / 3.0, dt=0.01):
        return cls("L63", {"sigma": sigma, "rho": rho, "beta": beta}, dt, 0.91, 0.3)

    @classmethod
    def lorenz96(cls, d=40, forcing=10.0, dt=0.01):
        return cls("L96", {"d": d, "forcing": forcing}, dt, 1.68, 0.5)

    @classmethod
    def kuramoto_sivashinsky(cls, length=22.0, nx=64, dt=0.25):
        return cls("KS", {"length": length, "nx": nx}, dt, 0.05, 0.5)

    @property
    def dim(self) -> int:
        return {"L63": 3, "L96": self.params.get("d", 0), "KS": self.params.get("nx", 0)}[self.kind]

    @property
    def lyapunov_time(self) -> float:
        return 1.0 / self.lyapunov_exponent

    def rhs(self) -> Callable[[np.ndarray], np.ndarray]:
        """Vector field ``u -> du/dt``; for KS the pseudo-spectral right-hand side."""
        p = self.params
        if self.kind == "L63":
            return lambda u: lorenz63_rhs(u, p["sigma"], p["rho"], p["beta"])
        if self.kind == "L96":
            return lambda u: lorenz96_rhs(u, p["forcing"])
        return lambda u: ks_rhs(u, p["length"])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": dict(self.params),
            "dt": self.dt,
            "lyapunov_exponent": self.lyapunov_exponent,
            "vpt_threshold": self.vpt_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemSpec":
        return cls(d["kind"], dict(d["params"]), d["dt"], d["lyapunov_exponent"], d["vpt_threshold"])


@dataclass
class Trajectory:
    states: np.ndarray
    dt: float
    t0: float = 0.0
    system: SystemSpec | None = None
    noise_level: float = 0.0
    seed: int | None = None
    burn_in: int = 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[0] < 2:
            raise ConfigurationError("a trajectory needs shape (N >= 2, D)")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n) * self.dt

    def slice(self, start: int, stop: int | None = None) -> "Trajectory":
        return replace(self, states=self.states[start:stop], t0=self.t0 + start * self.dt)

    def sidecar(self) -> dict:
        return {
            "system": None if self.system is None else self.system.kind,
            "params": None if self.system is None else self.system.to_dict(),
            "dt": self.dt,
            "t0": self.t0,
            "N": self.n,
            "D": self.dim,
            "sigma_nr": self.noise_level,
            "seed": self.seed,
            "burn_in": self.burn_in,
        }

    def save(self, path) -> None:
        """Write raw little-endian float64 rows plus a ``.json`` sidecar."""
        path = Path(path)
        path.write_bytes(np.ascontiguousarray(self.states, dtype="<f8").tobytes())
        path.with_suffix(".json").write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "Trajectory":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        raw = np.frombuffer(path.read_bytes(), dtype="<f8")
        if raw.size != meta["N"] * meta["D"]:
            raise ConfigurationError(f"{path}: expected {meta['N']}x{meta['D']} values, got {raw.size}")
        system = SystemSpec.from_dict(meta["params"]) if meta.get("params") else None
        return cls(
            raw.reshape(meta["N"], meta["D"]).astype(np.float64),
            meta["dt"],
            meta["t0"],
            system,
            meta["sigma_nr"],
            meta["seed"],
            meta.get("burn_in", 0),
        )


# right-hand sides -----------------------------------------------------------


def lorenz63_rhs(state, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    u = np.asarray(state, dtype=np.float64)
    x, y, z = u[..., 0], u[..., 1], u[..., 2]
    return np.stack([sigma * (y - x), x * (rho - z) - y, x * y - beta * z], axis=-1)


def lorenz96_rhs(state, forcing=10.0):
    x = np.asarray(state, dtype=np.float64)
    if x.shape[-1] < 4:
        raise ConfigurationError("Lorenz-96 needs d >= 4")
    return (np.roll(x, -1, axis=-1) - np.roll(x, 2, axis=-1)) * np.roll(x, 1, axis=-1) - x + forcing


def _ks_wavenumbers(nx: int, length: float) -> np.ndarray:
    return 2.0 * np.pi / length * np.arange(nx // 2 + 1)


def _dealias_mask(nx: int) -> np.ndarray:
    idx = np.arange(nx // 2 + 1)
    return (idx < nx / 3.0).astype(np.float64)


def ks_rhs(field, length=22.0):
    """Pseudo-spectral ``-u u_x - u_xx - u_xxxx`` on a periodic grid (2/3 dealiased)."""
    u = np.asarray(field, dtype=np.float64)
    nx = u.shape[-1]
    k = _ks_wavenumbers(nx, length)
    v = np.fft.rfft(u, axis=-1)
    nonlin = -0.5j * k * np.fft.rfft(u * u, axis=-1) * _dealias_mask(nx)
    return np.fft.irfft((k**2 - k**4) * v + nonlin, n=nx, axis=-1)


@dataclass(frozen=True)
class _ETDRK4:
    k: np.ndarray
    mask: np.ndarray
    e: np.ndarray
    e2: np.ndarray
    q: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray


@lru_cache(maxsize=16)
def _etdrk4_coefficients(nx: int, dt: float, length: float, n_contour: int = 32) -> _ETDRK4:
    # phi-function coefficients by contour averaging (Kassam & Trefethen 2005)
    k = _ks_wavenumbers(nx, length)
    lin = k**2 - k**4
    r = np.exp(1j * np.pi * (np.arange(1, n_contour + 1) - 0.5) / n_contour)
    lr = dt * lin[:, None] + r[None, :]
    q = dt * np.real(np.mean((np.exp(lr / 2) - 1) / lr, axis=1))
    f1 = dt * np.real(np.mean((-4 - lr + np.exp(lr) * (4 - 3 * lr + lr**2)) / lr**3, axis=1))
    f2 = dt * np.real(np.mean((2 + lr + np.exp(lr) * (lr - 2)) / lr**3, axis=1))
    f3 = dt * np.real(np.mean((-4 - 3 * lr - lr**2 + np.exp(lr) * (4 - lr)) / lr**3, axis=1))
    return _ETDRK4(k, _dealias_mask(nx), np.exp(dt * lin), np.exp(dt * lin / 2), q, f1, f2, f3)


def ks_step(field, dt=0.25, length=22.0):
    """Advance the KS field one ETDRK4 step of size ``dt``. Accepts (..., Nx)."""
    u = np.asarray(field, dtype=np.float64)
    nx = u.shape[-1]
    if nx % 2:
        raise ConfigurationError("KS needs an even number of grid points")
    c = _etdrk4_coefficients(nx, float(dt), float(length))
    g = -0.5j * c.k * c.mask

    def nonlin(v):
        w = np.fft.irfft(v, n=nx, axis=-1)
        return g * np.fft.rfft(w * w, axis=-1)

    v = np.fft.rfft(u, axis=-1)
    nv = nonlin(v)
    a = c.e2 * v + c.q * nv
    na = nonlin(a)
    b = c.e2 * v + c.q * na
    nb = nonlin(b)
    cc = c.e2 * a + c.q * (2 * nb - nv)
    nc = nonlin(cc)
    v = c.e * v + nv * c.f1 + 2 * (na + nb) * c.f2 + nc * c.f3
    out = np.fft.irfft(v, n=nx, axis=-1)
    if not np.all(np.isfinite(out)):
        raise IntegrationError("KS integration produced non-finite values")
    return out


# explicit Runge-Kutta ---------------------------------------------------------


@dataclass(frozen=True)
class Tableau:
    name: str
    a: tuple
    b: tuple
    c: tuple
    order: int
    b_err: tuple | None = None  # b - b_embedded, for adaptive stepping

    @property
    def adaptive(self) -> bool:
        return self.b_err is not None


def _embedded(b, b_hat):
    return tuple(x - y for x, y in zip(b, b_hat))


TABLEAUS = {
    "euler": Tableau("euler", (), (1.0,), (0.0,), 1),
    "midpoint": Tableau("midpoint", ((0.5,),), (0.0, 1.0), (0.0, 0.5), 2),
    "rk4": Tableau(
        "rk4", ((0.5,), (0.0, 0.5), (0.0, 0.0, 1.0)), (1 / 6, 1 / 3, 1 / 3, 1 / 6), (0, 0.5, 0.5, 1), 4
    ),
    "bosh3": Tableau(
        "bosh3",
        ((0.5,), (0.0, 0.75), (2 / 9, 1 / 3, 4 / 9)),
        (2 / 9, 1 / 3, 4 / 9, 0.0),
        (0.0, 0.5, 0.75, 1.0),
        3,
        _embedded((2 / 9, 1 / 3, 4 / 9, 0.0), (7 / 24, 1 / 4, 1 / 3, 1 / 8)),
    ),
    "dopri5": Tableau(
        "dopri5",
        (
            (1 / 5,),
            (3 / 40, 9 / 40),
            (44 / 45, -56 / 15, 32 / 9),
            (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
            (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
            (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
        ),
        (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0),
        (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0),
        5,
        _embedded(
            (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0),
            (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40),
        ),
    ),
}
METHODS = tuple(TABLEAUS)


def _stages(f, u, h, tab: Tableau, k1=None):
    ks = [f(u) if k1 is None else k1]
    for row in tab.a:
        y = u
        for coef, k in zip(row, ks):
            if coef != 0.0:
                y = y + (h * coef) * k
        ks.append(f(y))
    return ks


def _combine(u, h, weights, ks):
    y = u
    for w, k in zip(weights, ks):
        if w != 0.0:
            y = y + (h * w) * k
    return y


def rk_step(f, u, dt, method="rk4"):
    """One fixed step of an explicit scheme. Works on numpy arrays and Tensors.

    Adaptive pairs are used at their propagating order; stages with zero
    weight (the FSAL stage) are skipped.
    """
    try:
        tab = TABLEAUS[method]
    except KeyError:
        raise ConfigurationError(f"unknown method {method!r}; choose from {METHODS}") from None
    n_used = max(i for i, w in enumerate(tab.b) if w != 0.0) + 1
    trimmed = Tableau(tab.name, tab.a[: n_used - 1], tab.b[:n_used], tab.c[:n_used], tab.order)
    return _combine(u, dt, trimmed.b, _stages(f, u, dt, trimmed))


def rk4_step(f, u, dt):
    """Classical fourth-order Runge-Kutta step."""
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    out = rk_step(f, u, dt, "rk4")
    if not np.all(np.isfinite(out)):
        raise IntegrationError("RK4 step produced non-finite values")
    return out


def _alive(y, bound):
    flat = y.reshape(-1, y.shape[-1]) if y.ndim > 1 else y.reshape(1, -1)
    ok = np.all(np.isfinite(flat), axis=-1) & (np.max(np.abs(np.nan_to_num(flat, nan=np.inf)), axis=-1) < bound)
    return ok


def integrate_states(
    f,
    u0,
    n_steps: int,
    dt: float,
    method: str = "rk4",
    rtol: float = 1e-8,
    atol: float = 1e-8,
    on_blowup: str = "raise",
    bound: float = 1e8,
    max_substeps: int = 100_000,
) -> np.ndarray:
    """States on the uniform grid ``0, dt, ..., n_steps*dt``.

    ``u0`` is (D,) or a batch (B, D); the result has shape (n_steps+1, *u0.shape).
    Adaptive methods integrate each grid interval separately and land on its
    end point exactly. With ``on_blowup="mask"`` batch members that leave
    ``bound`` or go non-finite are set to NaN and integration continues for
    the rest; with ``"raise"`` an :class:`IntegrationError` is raised.
    """
    if n_steps < 1:
        raise ConfigurationError("n_steps must be >= 1")
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    if method not in TABLEAUS:
        raise ConfigurationError(f"unknown method {method!r}; choose from {METHODS}")
    if on_blowup not in ("raise", "mask"):
        raise ConfigurationError("on_blowup must be 'raise' or 'mask'")
    tab = TABLEAUS[method]
    y = np.array(u0, dtype=np.float64)
    out = np.empty((n_steps + 1,) + y.shape)
    out[0] = y
    batched = y.ndim > 1
    alive = _alive(y, bound)
    h = dt
    err_exp = -1.0 / tab.order  # embedded pair is one order lower
    for n in range(n_steps):
        if not tab.adaptive:
            y = rk_step(f, y, dt, method)
        else:
            t, k1, substeps = 0.0, None, 0
            while dt - t > 1e-14 * dt:
                h_try = min(h, dt - t)
                ks = _stages(f, y, h_try, tab, k1)
                y_new = _combine(y, h_try, tab.b, ks)
                e = _combine(np.zeros_like(y), h_try, tab.b_err, ks)
                scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
                per = np.sqrt(np.mean(((e / scale) ** 2).reshape(-1, y.shape[-1]), axis=-1))
                per = np.where(np.isfinite(per), per, np.inf)
                # members that were already dead do not steer the step size
                live = per[alive] if batched else per
                err = float(live.max()) if live.size else 0.0
                if err <= 1.0:
                    t += h_try
                    y = y_new
                    k1 = ks[-1] if tab.c[-1] == 1.0 and tab.b[-1] == 0.0 else None
                    fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err**err_exp))
                    # a step shortened to land on the grid does not shrink the controller step
                    h = max(h, h_try * fac) if h_try < h else h_try * fac
                else:
                    h = h_try * max(0.2, 0.9 * err**err_exp)
                substeps += 1
                if h < 1e-12 * dt or substeps > max_substeps:
                    if on_blowup == "mask" and batched:
                        flat = y.reshape(-1, y.shape[-1])
                        flat[per > 1.0] = np.nan
                        y = flat.reshape(y.shape)
                        alive = alive & ~(per > 1.0)
                        h, substeps = dt, 0
                        continue
                    raise IntegrationError(
                        f"step size underflow in {method} at grid index {n}", n, out[: n + 1].copy()
                    )
        now_alive = _alive(y, bound)
        if not np.all(now_alive):
            if on_blowup == "raise":
                raise IntegrationError(
                    f"integration blew up at grid index {n + 1}", n, out[: n + 1].copy()
                )
            flat = y.reshape(-1, y.shape[-1])
            flat[~now_alive] = np.nan
            y = flat.reshape(y.shape)
        alive = now_alive
        out[n + 1] = y
        if not np.any(alive):
            out[n + 2 :] = np.nan
            break
    return out


def integrate(
    f, u0, n_steps: int, dt: float, method: str = "rk4", rtol: float = 1e-8, atol: float = 1e-8, t0: float = 0.0
) -> Trajectory:
    """Integrate a single state and wrap the grid values in a :class:`Trajectory`."""
    states = integrate_states(f, np.asarray(u0, dtype=np.float64).reshape(-1), n_steps, dt, method, rtol, atol)
    return Trajectory(states, dt, t0)


def add_noise(traj: Trajectory, sigma_nr: float, seed: int = 0) -> Trajectory:
    """Additive Gaussian noise with per-dimension std ``sigma_nr * RMS(clean)``."""
    if sigma_nr < 0:
        raise ConfigurationError("noise level must be nonnegative")
    if sigma_nr == 0:
        return replace(traj, states=traj.states.copy(), noise_level=0.0, seed=seed)
    rms = np.sqrt(np.mean(traj.states**2, axis=0))
    rng = np.random.default_rng(seed)
    noisy = traj.states + rng.standard_normal(traj.states.shape) * (sigma_nr * rms)
    return replace(traj, states=noisy, noise_level=sigma_nr, seed=seed)


def _initial_condition(spec: SystemSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "L63":
        return np.ones(3) + rng.uniform(-0.1, 0.1, size=3)
    if spec.kind == "L96":
        d = spec.params["d"]
        x = np.full(d, float(spec.params["forcing"]))
        x[rng.integers(d)] += 1.0
        return x + rng.uniform(-1e-3, 1e-3, size=d)
    nx, length = spec.params["nx"], spec.params["length"]
    coeffs = np.zeros(nx // 2 + 1, dtype=complex)
    coeffs[1:5] = 0.1 * nx * (rng.standard_normal(4) + 1j * rng.standard_normal(4))
    return np.fft.irfft(coeffs, n=nx)


def generate_dataset(
    spec: SystemSpec,
    duration: float,
    burn_in: int | None = None,
    seed: int = 0,
    method: str = "dopri5",
    rtol: float = 1e-8,
    atol: float = 1e-8,
) -> Trajectory:
    """Clean attractor trajectory of ``round(duration/dt)`` rows after burn-in.

    ODE systems are advanced with ``method`` (dopri5 at 1e-8 by default, so the
    data double as an accurate reference); KS uses ETDRK4 at the data step.
    """
    if duration <= 0:
        raise ConfigurationError("duration must be positive")
    n_rows = int(round(duration / spec.dt))
    if n_rows < 2:
        raise ConfigurationError("duration shorter than two samples")
    burn = DEFAULT_BURN_IN[spec.kind] if burn_in is None else int(burn_in)
    rng = np.random.default_rng(seed)
    u = _initial_condition(spec, rng)
    total = burn + n_rows - 1
    states = np.empty((burn + n_rows, u.size))
    states[0] = u
    if spec.kind == "KS":
        length = spec.params["length"]
        for n in range(total):
            try:
                u = ks_step(u, spec.dt, length)
            except IntegrationError as exc:
                raise IntegrationError(f"KS generation blew up at step {n}", n) from exc
            states[n + 1] = u
    else:
        try:
            states = integrate_states(spec.rhs(), u, total, spec.dt, method, rtol, atol)
        except IntegrationError as exc:
            raise IntegrationError(f"{spec.kind} generation blew up: {exc}", exc.last_valid_index) from exc
    return Trajectory(states[burn:], spec.dt, burn * spec.dt, spec, 0.0, seed, burn)


def continue_reference(spec: SystemSpec, start: np.ndarray, n_rows: int, method: str = "dopri5") -> np.ndarray:
    """Reference continuation from ``start`` with the data generator's scheme."""
    if spec.kind == "KS":
        out = np.empty((n_rows, start.size))
        out[0] = start
        u = start
        for n in range(1, n_rows):
            u = ks_step(u, spec.dt, spec.params["length"])
            out[n] = u
        return out
    return integrate_states(spec.rhs(), start, n_rows - 1, spec.dt, method)
