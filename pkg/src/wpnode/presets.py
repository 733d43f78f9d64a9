"""Named experiment configurations for the three benchmark systems.

Names look like ``l63-noise5-wp``: system, noise percentage, loss mode.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .dynamics import SystemSpec
from .errors import ConfigurationError
from .training import TrainConfig

SYSTEMS = ("l63", "l96", "ks")
NOISE_PERCENTS = (0, 1, 5, 10, 20)
METHODS = ("strong", "weak", "wp")

# rollout steps of the penalty term, per system and noise percentage
WP_ROLLOUTS = {
    "l63": {0: 1, 1: 2, 5: 2, 10: 1, 20: 2},
    "l96": {0: 1, 1: 1, 5: 2, 10: 2, 20: 1},
    "ks": {0: 1, 1: 1, 5: 1, 10: 1, 20: 5},
}
STRONG_ROLLOUT = 25
STRONG_EPOCHS = {"l63": 150, "l96": 200, "ks": 300}
WEAK_EPOCHS = 20_000

_SYSTEM_DEFAULTS = {
    # spec factory, samples, subdomain size, batch, hidden widths, KL run length
    "l63": (SystemSpec.lorenz63, 10_000, 60, 1024, (64,), 100.0),
    "l96": (SystemSpec.lorenz96, 100_000, 80, 1024, (128,), 100.0),
    "ks": (SystemSpec.kuramoto_sivashinsky, 100_000, 60, 2048, (256,), 600.0),
}


@dataclass(frozen=True)
class EvalSettings:
    eps: float
    lyapunov_exponent: float
    n_starts: int = 30
    horizon: float = 10.0  # Lyapunov times
    kl_duration: float = 100.0  # time units of free run per start
    solver: str = "dopri5"


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    system: SystemSpec
    noise: float
    n_samples: int
    train: TrainConfig
    evaluation: EvalSettings

    @property
    def duration(self) -> float:
        return self.n_samples * self.system.dt

    def scaled(self, n_samples: int | None = None, **train_overrides) -> "ExperimentPreset":
        """Copy with a different sample count (K kept at half of it) and/or TrainConfig fields."""
        n = self.n_samples if n_samples is None else int(n_samples)
        overrides = {"n_subdomains": n // 2} if self.train.uses_weak else {}
        overrides.update(train_overrides)
        return replace(self, n_samples=n, train=replace(self.train, **overrides))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "system": self.system.to_dict(),
            "noise": self.noise,
            "n_samples": self.n_samples,
            "train": self.train.to_dict(),
            "evaluation": asdict(self.evaluation),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPreset":
        known = {f.name for f in fields(cls)}
        if set(d) != known:
            raise ConfigurationError(f"preset fields must be exactly {sorted(known)}")
        return cls(
            d["name"],
            SystemSpec.from_dict(d["system"]),
            float(d["noise"]),
            int(d["n_samples"]),
            TrainConfig.from_dict(d["train"]),
            EvalSettings(**d["evaluation"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentPreset":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ExperimentPreset":
        return cls.from_json(Path(path).read_text())


def _build(system: str, pct: int, method: str) -> ExperimentPreset:
    factory, n, m, batch, hidden, kl_duration = _SYSTEM_DEFAULTS[system]
    spec = factory()
    common = dict(batch_size=batch, lr_init=0.02, hidden=hidden, subdomain_size=m, p=16)
    if method == "strong":
        cfg = TrainConfig(loss_mode="strong", rollout_T=STRONG_ROLLOUT, max_epochs=STRONG_EPOCHS[system], **common)
    elif method == "weak":
        cfg = TrainConfig(loss_mode="weak", n_subdomains=n // 2, max_epochs=WEAK_EPOCHS, **common)
    else:
        cfg = TrainConfig(
            loss_mode="wp",
            rollout_T=WP_ROLLOUTS[system][pct],
            lam=0.5,
            n_subdomains=n // 2,
            max_epochs=WEAK_EPOCHS,
            **common,
        )
    ev = EvalSettings(spec.vpt_threshold, spec.lyapunov_exponent, kl_duration=kl_duration)
    return ExperimentPreset(f"{system}-noise{pct}-{method}", spec, pct / 100.0, n, cfg, ev)


def preset_names() -> list[str]:
    return [f"{s}-noise{p}-{m}" for s in SYSTEMS for p in NOISE_PERCENTS for m in METHODS]


def preset(name: str) -> ExperimentPreset:
    parts = name.split("-")
    ok = (
        len(parts) == 3
        and parts[0] in SYSTEMS
        and parts[1].startswith("noise")
        and parts[1][5:] in {str(n) for n in NOISE_PERCENTS}
        and parts[2] in METHODS
    )
    if not ok:
        raise LookupError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return _build(parts[0], int(parts[1][5:]), parts[2])
