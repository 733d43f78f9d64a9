"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The training criteria (5 to 9) are slow. Trained parameters are cached under
pytest's cache directory keyed by the full configuration and data, so a rerun
only repeats the evaluations; set WPNODE_ACCEPTANCE_FRESH=1 to retrain.
WPNODE_FULL_SCALE=1 switches criterion 9 to the full preset sizes.
"""

import hashlib
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from wpnode.autodiff import init_params, load_checkpoint, save_checkpoint
from wpnode.data import make_subdomains, minmax_apply, minmax_fit, reference_nodes, sliding_windows
from wpnode.dynamics import SystemSpec, Trajectory, add_noise, continue_reference, generate_dataset, integrate_states
from wpnode.evaluation import draw_starts, evaluate_model, free_runs, solver_sweep
from wpnode.presets import preset
from wpnode.training import combined_loss, prepare_data, strong_loss, train, validation_loss
from wpnode.weakform import weak_loss, weak_weights

from acceptance_log import record
from gradcheck import worst_relative_error
from oracles import gauss_legendre_weights, phi_integral, strong_loss_mp, weak_loss_mp

TESTS = Path(__file__).parent

# L63 training length for the weak and WP presets (the strong preset keeps its
# own 150 epochs); the preset's 20000 does not fit the stated time budgets
DESK_EPOCHS = 4000
C9_EPOCHS = {"l96": 1800, "ks": 1100}
C9_SAMPLES = 20_000
FULL_SCALE = os.environ.get("WPNODE_FULL_SCALE") == "1"
FRESH = os.environ.get("WPNODE_ACCEPTANCE_FRESH") == "1"
SWEEP_SOLVERS = ("euler", "midpoint", "rk4", "dopri5")


# shared data and models ------------------------------------------------------------


@pytest.fixture(scope="session")
def l63():
    spec = SystemSpec.lorenz63()
    clean = generate_dataset(spec, 100.0, seed=0)
    ref = continue_reference(spec, clean.states[-1], 50_001)[1:]
    return spec, clean, ref


def _noisy(clean: Trajectory, sigma: float) -> Trajectory:
    return add_noise(clean, sigma, seed=1) if sigma > 0 else clean


@pytest.fixture(scope="session")
def model_cache(request):
    return Path(request.config.cache.mkdir("wpnode-acceptance"))


def _train_cached(cache_dir: Path, exp, data: Trajectory):
    """Train (or reload) one preset; returns params, scaler and a summary dict."""
    key = hashlib.sha256(exp.to_json().encode() + data.states.tobytes()).hexdigest()[:20]
    path = cache_dir / f"{exp.name}-{key}.json"
    prepared = prepare_data(data, exp.train)
    if path.exists() and not FRESH:
        params, meta = load_checkpoint(path)
        return params, prepared.scaler, meta
    start = init_params([data.dim, *exp.train.hidden, data.dim], exp.train.seed)
    initial_val = validation_loss(start, prepared, exp.train)
    t0 = time.perf_counter()
    params, report = train(exp.train, prepared)
    meta = {
        "train_seconds": time.perf_counter() - t0,
        "initial_val": initial_val,
        "val_loss": report.val_loss,
        "best_val": report.best_val,
        "best_epoch": report.best_epoch,
    }
    save_checkpoint(path, params, meta)
    return params, prepared.scaler, meta


def _evaluate(spec, params, scaler, ref, **kw):
    return evaluate_model(params.vector_field(), spec, ref, scaler, **kw)


@pytest.fixture(scope="session")
def l63_models(l63, model_cache):
    """WP/weak/strong models at 0, 5 and 20 percent noise, trained on demand."""
    spec, clean, ref = l63
    built = {}

    def get(noise_pct: int, method: str):
        if (noise_pct, method) not in built:
            exp = preset(f"l63-noise{noise_pct}-{method}")
            if method != "strong":
                exp = exp.scaled(max_epochs=DESK_EPOCHS)
            data = _noisy(clean, exp.noise)
            params, scaler, meta = _train_cached(model_cache, exp, data)
            t0 = time.perf_counter()
            rep = _evaluate(spec, params, scaler, ref, n_starts=30, horizon=10.0, kl_duration=100.0)
            meta = dict(meta, eval_seconds=time.perf_counter() - t0)
            built[(noise_pct, method)] = (params, scaler, meta, rep)
        return built[(noise_pct, method)]

    return get


def _fmt(rep) -> str:
    return f"VPT {rep.vpt_mean:.2f}+-{rep.vpt_std:.2f}, KL {rep.kl_mean:.4f}, blowups {sum(rep.blowups)}"


# 1 ------------------------------------------------------------------------------------


def test_c1_weight_correctness():
    t0 = time.perf_counter()
    worst_abs, worst_sum, worst_rel = 0.0, 0.0, 0.0
    for m in (3, 10, 60, 80, 200):
        nodes = reference_nodes(m)
        length = (m - 1) * 0.01
        for p in range(1, 21):
            w = weak_weights(nodes, p, length)
            lhs, rhs = gauss_legendre_weights(nodes, p, length)
            worst_abs = max(worst_abs, np.max(np.abs(w.w_lhs - lhs)), np.max(np.abs(w.w_rhs - rhs)))
            worst_sum = max(worst_sum, abs(w.w_lhs.sum()))
            target = 0.5 * length * phi_integral(p)
            worst_rel = max(worst_rel, abs(w.w_rhs.sum() - target) / target)
    elapsed = time.perf_counter() - t0
    ok = worst_abs <= 1e-10 and worst_sum <= 1e-10 and worst_rel <= 1e-10 and elapsed < 10
    record(1, "weak-form weights", ok,
           f"max |w - GL| {worst_abs:.1e}, |sum w_lhs| {worst_sum:.1e}, rel sum w_rhs {worst_rel:.1e}, {elapsed:.1f}s")
    assert ok


# 2 ------------------------------------------------------------------------------------


def test_c2_gradient_suite(l63):
    t0 = time.perf_counter()
    _, clean, _ = l63
    x = minmax_apply(minmax_fit(clean.states), clean.states)[:500]
    lay = make_subdomains(len(x), 10, 4, clean.dt)
    w = weak_weights(lay.nodes, 16, lay.length)
    nodes = x[lay.node_indices()]
    windows = sliding_windows(x, 4).segments[::120][:3]
    errors = {}
    for seed, hidden in ((0, 8), (1, 5)):
        params = init_params([3, hidden, 3], seed)
        errors[f"weak/h{hidden}"] = worst_relative_error(
            lambda q: weak_loss(q, nodes, w),
            lambda layers: weak_loss_mp(layers, nodes, w.w_lhs, w.w_rhs),
            params,
        )
        for T in (1, 3):
            errors[f"strong/T{T}/h{hidden}"] = worst_relative_error(
                lambda q: strong_loss(q, windows, clean.dt, "rk4", T),
                lambda layers: strong_loss_mp(layers, windows, clean.dt, T),
                params,
            )
        errors[f"combined/h{hidden}"] = worst_relative_error(
            lambda q: combined_loss(q, nodes, windows, w, 0.5, 3, clean.dt),
            lambda layers: weak_loss_mp(layers, nodes, w.w_lhs, w.w_rhs) + 0.5 * strong_loss_mp(layers, windows, clean.dt, 3),
            params,
        )
    elapsed = time.perf_counter() - t0
    worst = max(errors.values())
    ok = worst < 1e-5 and elapsed < 60
    record(2, "gradient suite", ok, f"worst relative error {worst:.1e} over {len(errors)} checks, {elapsed:.1f}s")
    assert ok, errors


# 3 ------------------------------------------------------------------------------------


def test_c3_integrator_orders():
    t0 = time.perf_counter()

    def decay(u):
        return -u

    hs, errs = [], []
    for n in (10, 20, 40, 80):
        u = integrate_states(decay, np.array([1.0]), n, 1.0 / n, "rk4")[-1, 0]
        hs.append(1.0 / n)
        errs.append(abs(u - math.exp(-1.0)))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    u5 = integrate_states(decay, np.array([1.0]), 1, 1.0, "dopri5", 1e-8, 1e-8)[-1, 0]
    err5 = abs(u5 - math.exp(-1.0))
    elapsed = time.perf_counter() - t0
    ok = slope >= 3.9 and err5 <= 1e-7 and elapsed < 10
    record(3, "integrator orders", ok, f"RK4 slope {slope:.3f}, dopri5 error {err5:.1e}, {elapsed:.2f}s")
    assert ok


# 4 ------------------------------------------------------------------------------------


def test_c4_oracle_model(l63):
    spec, _, ref = l63
    t0 = time.perf_counter()
    rep = evaluate_model(spec.rhs(), spec, ref, n_starts=30, horizon=10.0, kl_duration=100.0)
    elapsed = time.perf_counter() - t0
    ok = min(rep.vpt) >= 9.0 and rep.kl_mean < 0.05 and elapsed < 120
    record(4, "oracle-model sanity", ok, f"min VPT {min(rep.vpt):.2f}, {_fmt(rep)}, {elapsed:.0f}s")
    assert ok


# 5 ------------------------------------------------------------------------------------


@pytest.mark.slow
def test_c5_l63_clean(l63_models):
    _, _, meta, rep = l63_models(0, "wp")
    minutes = (meta["train_seconds"] + meta["eval_seconds"]) / 60
    ok = rep.vpt_mean >= 1.5 and rep.kl_mean <= 0.2
    record(5, "L63 clean WP", ok, f"{_fmt(rep)} ({DESK_EPOCHS} epochs, {minutes:.1f} min; target 30 min)")
    assert ok


# 6 ------------------------------------------------------------------------------------


@pytest.mark.slow
def test_c6_l63_noise5_ordering(l63_models):
    runs = {m: l63_models(5, m) for m in ("wp", "strong", "weak")}
    wp, strong, weak = (runs[m][3] for m in ("wp", "strong", "weak"))
    minutes = sum(r[2]["train_seconds"] for r in runs.values()) / 60
    ok = wp.vpt_mean >= strong.vpt_mean and wp.kl_mean <= 0.3 and minutes <= 90
    record(6, "L63 5% noise ordering", ok,
           f"WP {_fmt(wp)} | strong {_fmt(strong)} | weak {_fmt(weak)} | training {minutes:.1f} min")
    assert ok


# 7 ------------------------------------------------------------------------------------


@pytest.mark.slow
def test_c7_l63_noise20_robustness(l63_models):
    wp = l63_models(20, "wp")[3]
    strong = l63_models(20, "strong")[3]
    ok = math.isfinite(wp.kl_mean) and math.isfinite(strong.kl_mean) and strong.kl_mean >= 2 * wp.kl_mean
    ratio = strong.kl_mean / wp.kl_mean if wp.kl_mean > 0 else math.inf
    record(7, "L63 20% noise KL ordering", ok, f"WP {_fmt(wp)} | strong {_fmt(strong)} | ratio {ratio:.2f}")
    assert ok


# 8 ------------------------------------------------------------------------------------


@pytest.mark.slow
def test_c8_solver_agnosticism(l63, l63_models):
    spec, _, ref = l63
    params, scaler, _, _ = l63_models(0, "wp")
    starts = ref[draw_starts(len(ref), 0, 30, seed=0)]
    oracle = solver_sweep(spec.rhs(), spec, starts, solvers=SWEEP_SOLVERS, duration=100.0).pairwise_kl()
    model = solver_sweep(params.vector_field(), spec, starts, scaler, solvers=SWEEP_SOLVERS, duration=100.0).pairwise_kl()
    bad = {pair: (model.get(pair, math.nan), oracle[pair]) for pair in oracle
           if not model.get(pair, math.inf) <= 3 * oracle[pair]}
    worst = max(model[p] / oracle[p] for p in oracle if p in model)
    ok = not bad and len(model) == len(oracle)
    detail = ", ".join(f"{a}/{b} {model.get((a, b), math.nan):.1e} vs {oracle[(a, b)]:.1e}" for a, b in oracle)
    record(8, "solver agnosticism", ok, f"worst model/oracle ratio {worst:.2f}; {detail}")
    assert ok, bad


# 9 ------------------------------------------------------------------------------------


@pytest.mark.slow
@pytest.mark.parametrize("system", ["l96", "ks"])
def test_c9_reduced_scale_properties(system, model_cache):
    exp = preset(f"{system}-noise0-wp")
    if not FULL_SCALE:
        exp = exp.scaled(n_samples=C9_SAMPLES, max_epochs=C9_EPOCHS[system])
    spec = exp.system
    t0 = time.perf_counter()
    data = generate_dataset(spec, exp.n_samples * spec.dt, seed=0)
    horizon_steps = int(round(5.0 / spec.lyapunov_exponent / spec.dt))
    ref = continue_reference(spec, data.states[-1], 20 * horizon_steps + 1)[1:]
    setup = time.perf_counter() - t0
    params, scaler, meta = _train_cached(model_cache, exp, data)
    drop = meta["initial_val"] / meta["best_val"]
    t1 = time.perf_counter()
    rep = evaluate_model(params.vector_field(), spec, ref, scaler, n_starts=30, horizon=5.0, kl_duration=None)
    runs = free_runs(params.vector_field(), ref[np.asarray(rep.starts)], horizon_steps, spec.dt, scaler)
    amplitude = np.nanmax(np.abs(runs)) / np.abs(ref).max()
    bounded = not any(rep.blowups) and bool(np.all(np.isfinite(runs))) and amplitude <= 10
    minutes = (setup + meta["train_seconds"] + time.perf_counter() - t1) / 60
    ok = drop >= 10 and bounded and rep.vpt_mean > 0.5 and minutes <= 60
    record(9, f"{system.upper()} reduced-scale properties", ok,
           f"N={exp.n_samples}, {exp.train.max_epochs} epochs, val loss drop {drop:.1f}x, bounded {bounded} "
           f"(max |u| {amplitude:.2f}x reference), VPT {rep.vpt_mean:.2f}+-{rep.vpt_std:.2f} over 5 LT, {minutes:.1f} min")
    assert ok


# 10 -----------------------------------------------------------------------------------


def test_c10_property_suites():
    suites = sorted(str(p) for p in TESTS.glob("test_*.py") if p.name != "test_acceptance.py")
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *suites],
                          capture_output=True, text=True, cwd=TESTS.parent)
    elapsed = time.perf_counter() - t0
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and elapsed < 300
    record(10, "module property suites", ok, f"{len(suites)} modules, {summary}, {elapsed:.0f}s")
    assert ok, proc.stdout[-3000:]
