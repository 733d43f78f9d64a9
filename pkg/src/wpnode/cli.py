"""Command line entry point: ``wpnode generate|train|evaluate|compare|sweep``.

Every command writes a ``manifest.json`` into its output directory. Exit codes
are 0 on success, 1 for usage or configuration errors and 2 for numerical
failures (training divergence, integrator blow-up).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from .autodiff import load_checkpoint, save_checkpoint
from .data import MinMaxScaler
from .dynamics import SystemSpec, Trajectory, add_noise, continue_reference, generate_dataset
from .errors import ConfigurationError, IntegrationError, TrainingError, WPNodeError
from .evaluation import (
    EvalReport,
    draw_starts,
    evaluate_model,
    free_runs,
    histogram_pdf,
    solver_sweep,
    union_ranges,
)
from .presets import ExperimentPreset, EvalSettings, _SYSTEM_DEFAULTS, preset
from .training import TrainConfig, prepare_data, train

log = logging.getLogger("wpnode")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
REFERENCE_DURATION = {"l63": 500.0, "l96": 500.0, "ks": 5000.0}
SWEEP_AXES = {
    "layers": "hidden",
    "M": "subdomain_size",
    "signal_length": "n_samples",
    "batch": "batch_size",
    "K": "n_subdomains",
    "p": "p",
    "rollouts": "rollout_T",
    "lambda": "lam",
    "λ": "lam",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _system_key(spec: SystemSpec) -> str:
    return spec.kind.lower()


def _spec_for(name: str) -> SystemSpec:
    try:
        return _SYSTEM_DEFAULTS[name][0]()
    except KeyError:
        raise ConfigurationError(f"unknown system {name!r}; choose from {sorted(_SYSTEM_DEFAULTS)}") from None


def write_manifest(out_dir: Path, command: str, config: dict, seeds: dict, inputs: list, outputs: list, t0: float):
    doc = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": sorted(str(p) for p in inputs),
        "outputs": sorted(str(p) for p in outputs),
        "version": _version(),
        "wall_time": time.perf_counter() - t0,
    }
    (out_dir / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def worker_count(requested: int | None = None) -> int:
    """Pool size: the request, capped by ``WPNODE_THREADS`` when set."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("WPNODE_THREADS")
    if cap:
        try:
            n = min(n, int(cap))
        except ValueError:
            raise ConfigurationError(f"WPNODE_THREADS must be an integer, got {cap!r}") from None
    return max(1, n)


# generate ---------------------------------------------------------------------


def cmd_generate(args) -> int:
    t0 = time.perf_counter()
    spec = _spec_for(args.system)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = args.samples if args.samples else int(round(args.duration / spec.dt))
    clean = generate_dataset(spec, n * spec.dt, burn_in=args.burn_in, seed=args.seed)
    noisy = add_noise(clean, args.noise, seed=args.seed + 1)
    ref_duration = args.reference_duration if args.reference_duration is not None else REFERENCE_DURATION[args.system]
    n_ref = int(round(ref_duration / spec.dt))
    paths = [out / f"{args.system}_clean.f64", out / f"{args.system}_noisy.f64"]
    clean.save(paths[0])
    noisy.save(paths[1])
    if n_ref > 0:
        ref_states = continue_reference(spec, clean.states[-1], n_ref + 1)[1:]
        ref = Trajectory(ref_states, spec.dt, clean.t0 + clean.n * spec.dt, spec, 0.0, args.seed, clean.burn_in)
        paths.append(out / f"{args.system}_reference.f64")
        ref.save(paths[-1])
    cfg = {
        "system": spec.to_dict(),
        "samples": n,
        "noise": args.noise,
        "burn_in": clean.burn_in,
        "reference_samples": n_ref,
    }
    write_manifest(out, "generate", cfg, {"trajectory": args.seed, "noise": args.seed + 1}, [], paths, t0)
    return EXIT_OK


# train ------------------------------------------------------------------------


def _resolve_preset(args) -> ExperimentPreset:
    if args.config:
        base = ExperimentPreset.load(args.config)
    elif args.preset:
        base = preset(args.preset)
    else:
        raise ConfigurationError("give --preset or --config")
    overrides = {}
    flag_map = {
        "loss": "loss_mode",
        "rollout": "rollout_T",
        "lam": "lam",
        "epochs": "max_epochs",
        "seed": "seed",
        "lr": "lr_init",
        "batch_size": "batch_size",
        "subdomain_size": "subdomain_size",
        "subdomains": "n_subdomains",
        "p": "p",
        "solver": "solver",
        "max_wall_time": "max_wall_time",
    }
    for flag, key in flag_map.items():
        v = getattr(args, flag, None)
        if v is not None:
            overrides[key] = v
    if getattr(args, "hidden", None):
        overrides["hidden"] = _parse_hidden(args.hidden)
    n = getattr(args, "samples", None)
    cfg = base.train.to_dict()
    cfg.update(overrides)
    if cfg["loss_mode"] == "weak":
        cfg["rollout_T"] = 1
    if cfg["loss_mode"] == "strong" and "rollout_T" not in overrides and base.train.loss_mode != "strong":
        cfg["rollout_T"] = 25
    train_cfg = TrainConfig.from_dict(cfg)
    out = replace(base, train=train_cfg)
    if n:
        keep_k = "n_subdomains" in overrides
        out = out.scaled(n_samples=n)
        if keep_k:
            out = replace(out, train=replace(out.train, n_subdomains=overrides["n_subdomains"]))
    return out


def _parse_hidden(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(int(h) for h in text)
    parts = str(text).replace("x", ",").split(",")
    try:
        return tuple(int(h) for h in parts if h.strip())
    except ValueError:
        raise ConfigurationError(f"bad hidden layer spec {text!r}") from None


def _load_training_data(data_dir: Path, exp: ExperimentPreset, which: str = "noisy") -> Trajectory:
    key = _system_key(exp.system)
    path = data_dir / f"{key}_{which}.f64"
    if not path.exists():
        raise ConfigurationError(f"missing data file {path}")
    traj = Trajectory.load(path)
    if traj.dim != exp.system.dim:
        raise ConfigurationError(f"{path} has dimension {traj.dim}, preset expects {exp.system.dim}")
    if exp.n_samples and traj.n > exp.n_samples:
        traj = Trajectory(traj.states[: exp.n_samples], traj.dt, traj.t0, traj.system, traj.noise_level, traj.seed, traj.burn_in)
    return traj


def run_training(exp: ExperimentPreset, data_dir: Path, out: Path, which: str = "noisy"):
    """Train ``exp`` on the data in ``data_dir``; writes checkpoint.json and history.csv.

    Returns the parameters, the report and the effective preset.
    """
    out.mkdir(parents=True, exist_ok=True)
    traj = _load_training_data(data_dir, exp, which)
    if traj.n != exp.n_samples and exp.train.n_subdomains in (None, exp.n_samples // 2):
        # shorter data file: keep K at half the samples actually used
        exp = exp.scaled(n_samples=traj.n)
    prepared = prepare_data(traj, exp.train)
    meta = {
        "preset": exp.to_dict(),
        "method": exp.train.loss_mode,
        "noise": exp.noise,
        "scaler": prepared.scaler.to_dict(),
        "samples": traj.n,
    }
    try:
        params, report = train(exp.train, prepared)
    except TrainingError as e:
        if e.report is not None:
            e.report.write_history(out / "history.csv")
        raise
    report.write_history(out / "history.csv")
    meta.update(best_epoch=report.best_epoch, best_val=report.best_val, stopped_epoch=report.stopped_epoch)
    save_checkpoint(out / "checkpoint.json", params, meta)
    return params, report, exp


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    exp = _resolve_preset(args)
    out = Path(args.out)
    _, report, exp = run_training(exp, Path(args.data), out, args.which)
    inputs = [Path(args.data) / f"{_system_key(exp.system)}_{args.which}.f64"]
    write_manifest(
        out,
        "train",
        exp.to_dict(),
        {"train": exp.train.seed},
        inputs,
        [out / "checkpoint.json", out / "history.csv"],
        t0,
    )
    log.info("trained %d epochs, best %d (val %.3e)", report.stopped_epoch, report.best_epoch, report.best_val)
    return EXIT_OK


# evaluate ---------------------------------------------------------------------


def _load_model(checkpoint: Path):
    params, meta = load_checkpoint(checkpoint)
    exp = ExperimentPreset.from_dict(meta["preset"])
    return params.vector_field(), MinMaxScaler.from_dict(meta["scaler"]), exp, meta


def _load_reference(data_dir: Path, spec: SystemSpec) -> Trajectory:
    path = data_dir / f"{_system_key(spec)}_reference.f64"
    if not path.exists():
        raise ConfigurationError(f"missing reference continuation {path}")
    return Trajectory.load(path)


def _write_histograms(out: Path, prefix: str, samples, ranges, bins: int) -> list:
    paths = []
    for j, h in enumerate(histogram_pdf(samples, bins, ranges)):
        p = out / f"{prefix}_dim{j}.csv"
        h.to_csv(p)
        paths.append(p)
    return paths


def run_evaluation(field, scaler, spec: SystemSpec, settings: EvalSettings, reference: Trajectory, out: Path,
                   solver: str | None = None, n_starts: int | None = None, seed: int = 0, histograms: bool = True):
    out.mkdir(parents=True, exist_ok=True)
    solver = solver or settings.solver
    n_starts = n_starts or settings.n_starts
    report = evaluate_model(
        field, spec, reference, scaler, n_starts, settings.horizon, solver, seed, settings.kl_duration,
        eps=settings.eps,
    )
    report.to_json(out / "report.json")
    paths = [out / "report.json"]
    if histograms and spec.kind != "KS":
        # free-run densities on the same bins as the reference
        ref = reference.states
        starts = ref[np.asarray(report.starts, dtype=int)]
        n_kl = int(round(settings.kl_duration / spec.dt))
        runs = free_runs(field, starts, n_kl, spec.dt, scaler, solver)
        pooled = runs[1:, np.asarray(report.kl_valid, dtype=bool)].reshape(-1, spec.dim)
        if pooled.size:
            ranges = union_ranges(ref, pooled)
            paths += _write_histograms(out, "hist_model", pooled, ranges, 50)
            paths += _write_histograms(out, "hist_reference", ref, ranges, 50)
    return report, paths


def run_solver_sweep(field, scaler, spec, settings: EvalSettings, reference: Trajectory, out: Path, n_starts: int, seed: int = 0):
    starts = draw_starts(reference.n, 1, n_starts, seed)
    result = solver_sweep(field, spec, reference.states[starts], scaler, duration=settings.kl_duration)
    paths = []
    for solver, hists in result.densities.items():
        if hists is None:
            continue
        for j, h in enumerate(hists):
            p = out / f"sweep_{solver}_dim{j}.csv"
            if len(h.edges) == 1:
                h.to_csv(p)
            else:
                _write_joint_csv(p, h)
            paths.append(p)
    p = out / "sweep_pairwise_kl.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["solver_a", "solver_b", "kl"])
        for (a, b), v in result.pairwise_kl().items():
            w.writerow([a, b, repr(v)])
    p2 = out / "sweep_blowups.json"
    p2.write_text(json.dumps(result.blowups, indent=2, sort_keys=True))
    return result, paths + [p, p2]


def _write_joint_csv(path: Path, h) -> None:
    ex, ey = h.edges
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["u_left", "u_right", "ux_left", "ux_right", "mass"])
        for i in range(ex.size - 1):
            for j in range(ey.size - 1):
                w.writerow([repr(float(ex[i])), repr(float(ex[i + 1])), repr(float(ey[j])), repr(float(ey[j + 1])),
                            repr(float(h.masses[i, j]))])


def cmd_evaluate(args) -> int:
    t0 = time.perf_counter()
    data_dir = Path(args.data)
    if args.oracle:
        spec = _spec_for(args.system)
        rhs = spec.rhs()
        field, scaler, meta_cfg = rhs, None, {"oracle": spec.to_dict()}
        settings = preset(f"{args.system}-noise0-wp").evaluation
        inputs = []
    else:
        if not args.checkpoint:
            raise ConfigurationError("give --checkpoint or --oracle")
        field, scaler, exp, _ = _load_model(Path(args.checkpoint))
        spec, settings, meta_cfg = exp.system, exp.evaluation, exp.to_dict()
        inputs = [Path(args.checkpoint)]
    if args.horizon is not None:
        settings = replace(settings, horizon=args.horizon)
    if args.kl_duration is not None:
        settings = replace(settings, kl_duration=args.kl_duration)
    reference = _load_reference(data_dir, spec)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    report, paths = run_evaluation(field, scaler, spec, settings, reference, out, args.solver, args.n_starts, args.seed)
    n_blow = sum(report.blowups)
    if n_blow:
        log.warning("%d of %d free runs blew up; they are excluded from the KL", n_blow, len(report.blowups))
    if args.solver_sweep:
        _, more = run_solver_sweep(field, scaler, spec, settings, reference, out, args.n_starts or settings.n_starts, args.seed)
        paths += more
    cfg = {"model": meta_cfg, "solver": args.solver or settings.solver, "n_starts": args.n_starts or settings.n_starts,
           "horizon": settings.horizon, "kl_duration": settings.kl_duration, "solver_sweep": bool(args.solver_sweep)}
    write_manifest(out, "evaluate", cfg, {"starts": args.seed}, inputs + [data_dir / f"{_system_key(spec)}_reference.f64"], paths, t0)
    print(f"VPT {report.vpt_mean:.3f} +- {report.vpt_std:.3f}  KL {report.kl_mean:.4f}")
    return EXIT_OK


# compare ----------------------------------------------------------------------


COMPARE_COLUMNS = ["method", "noise", "vpt_mean", "vpt_std", "kl_mean"]


def compare_rows(checkpoints, data_dir: Path | None = None) -> list[dict]:
    rows = []
    for ck in checkpoints:
        ck = Path(ck)
        report_path = ck.parent / "report.json"
        _, meta = load_checkpoint(ck)
        if not report_path.exists():
            if data_dir is None:
                raise ConfigurationError(f"no report.json next to {ck}; run evaluate first or pass --data")
            field, scaler, exp, _ = _load_model(ck)
            run_evaluation(field, scaler, exp.system, exp.evaluation, _load_reference(data_dir, exp.system), ck.parent)
        rep = EvalReport.from_json(report_path)
        rows.append({
            "method": meta["method"],
            "noise": float(meta["noise"]),
            "vpt_mean": rep.vpt_mean,
            "vpt_std": rep.vpt_std,
            "kl_mean": rep.kl_mean,
        })
    rows.sort(key=lambda r: (r["method"], r["noise"]))
    return rows


def cmd_compare(args) -> int:
    t0 = time.perf_counter()
    if len(args.checkpoints) < 2:
        raise ConfigurationError("compare needs at least two checkpoints")
    rows = compare_rows(args.checkpoints, Path(args.data) if args.data else None)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    write_manifest(out.parent, "compare", {"checkpoints": [str(c) for c in args.checkpoints]}, {}, args.checkpoints, [out], t0)
    return EXIT_OK


# sweep ------------------------------------------------------------------------


def _sweep_value(axis: str, text: str):
    key = SWEEP_AXES[axis]
    if key == "hidden":
        return _parse_hidden(text)
    if key == "lam":
        return float(text)
    return int(text)


def _parse_values(axis: str, spec_text: str) -> list:
    vals = []
    for part in spec_text.split(","):
        part = part.strip()
        if ".." in part and SWEEP_AXES[axis] not in ("lam", "hidden"):
            lo, hi = part.split("..")
            vals.extend(range(int(lo), int(hi) + 1))
        elif part:
            vals.append(_sweep_value(axis, part))
    if not vals:
        raise ConfigurationError("no sweep values given")
    return vals


def _sweep_point(job):
    exp, data_dir, out, which = job
    try:
        run_training(exp, data_dir, out, which)
        field, scaler, exp, _ = _load_model(out / "checkpoint.json")
        rep, _ = run_evaluation(field, scaler, exp.system, exp.evaluation, _load_reference(data_dir, exp.system), out,
                                histograms=False)
        return {"status": "ok", "vpt_mean": rep.vpt_mean, "vpt_std": rep.vpt_std, "kl_mean": rep.kl_mean, "error": ""}
    except (WPNodeError, FloatingPointError) as e:
        return {"status": "failed", "vpt_mean": float("nan"), "vpt_std": float("nan"), "kl_mean": float("nan"),
                "error": f"{type(e).__name__}: {e}"}


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    axis = "lambda" if args.axis in ("lam", "λ") else args.axis
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"unknown axis {args.axis!r}; choose from {sorted(set(SWEEP_AXES) - {'λ'})}")
    values = _parse_values(axis, args.values)
    base = _resolve_preset(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for v in values:
        key = SWEEP_AXES[axis]
        if key == "n_samples":
            exp = base.scaled(n_samples=v)
        else:
            exp = replace(base, train=replace(base.train, **{key: v}))
        label = "x".join(map(str, v)) if isinstance(v, tuple) else str(v)
        jobs.append((exp, Path(args.data), out / f"{axis}_{label}", args.which))
    n_workers = worker_count(args.workers)
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    table = out / "sweep.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["axis", "value", "status", "vpt_mean", "vpt_std", "kl_mean", "error"])
        for (exp, _, point_dir, _), v, r in zip(jobs, values, results):
            label = point_dir.name[len(axis) + 1:]
            w.writerow([axis, label, r["status"], repr(r["vpt_mean"]), repr(r["vpt_std"]), repr(r["kl_mean"]), r["error"]])
    cfg = {"axis": axis, "values": [list(v) if isinstance(v, tuple) else v for v in values], "base": base.to_dict(),
           "workers": n_workers}
    write_manifest(out, "sweep", cfg, {"train": base.train.seed}, [Path(args.data)], [table], t0)
    return EXIT_OK


# argument parsing -------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset")
    p.add_argument("--config", help="JSON preset file; flags override its values")
    p.add_argument("--data", required=True, help="directory written by generate")
    p.add_argument("--which", default="noisy", choices=("noisy", "clean"))
    p.add_argument("--loss", choices=("strong", "weak", "wp"))
    p.add_argument("--rollout", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden", help="comma separated widths, e.g. 64 or 128,128")
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--subdomain-size", dest="subdomain_size", type=int)
    p.add_argument("--subdomains", type=int, help="K, number of subdomains")
    p.add_argument("--p", type=int)
    p.add_argument("--solver")
    p.add_argument("--samples", type=int, help="use the first N rows (K follows as N/2)")
    p.add_argument("--max-wall-time", dest="max_wall_time", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wpnode", description="Weak-penalty neural ODE experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="simulate a system and write clean/noisy/reference files")
    g.add_argument("--system", required=True, choices=sorted(_SYSTEM_DEFAULTS))
    g.add_argument("--duration", type=float, default=None, help="time units after burn-in")
    g.add_argument("--samples", type=int, default=None, help="rows instead of --duration")
    g.add_argument("--noise", type=float, default=0.0, help="sigma_NR, e.g. 0.05")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    g.add_argument("--reference-duration", dest="reference_duration", type=float, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model from a preset or config file")
    _add_train_flags(t)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="VPT and KL of a checkpoint against the reference")
    e.add_argument("--checkpoint")
    e.add_argument("--oracle", action="store_true", help="use the true vector field as the model")
    e.add_argument("--system", default="l63", choices=sorted(_SYSTEM_DEFAULTS), help="system for --oracle")
    e.add_argument("--data", required=True)
    e.add_argument("--out")
    e.add_argument("--solver", default=None)
    e.add_argument("--n-starts", dest="n_starts", type=int, default=None)
    e.add_argument("--horizon", type=float, default=None, help="Lyapunov times")
    e.add_argument("--kl-duration", dest="kl_duration", type=float, default=None)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--solver-sweep", dest="solver_sweep", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="tabulate evaluated checkpoints")
    c.add_argument("checkpoints", nargs="+")
    c.add_argument("--data", help="evaluate checkpoints that have no report yet")
    c.add_argument("--out", required=True, help="CSV path")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep", help="vary one hyperparameter, train and evaluate each point")
    s.add_argument("--axis", required=True)
    s.add_argument("--values", required=True, help="comma separated; integer ranges as a..b")
    s.add_argument("--workers", type=int, default=None)
    _add_train_flags(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "generate" and args.duration is None and args.samples is None:
        args.samples = _SYSTEM_DEFAULTS[args.system][1]
    try:
        return args.func(args)
    except (ConfigurationError, LookupError, FileNotFoundError, KeyError, json.JSONDecodeError) as e:
        print(f"wpnode: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, IntegrationError, FloatingPointError) as e:
        print(f"wpnode: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
