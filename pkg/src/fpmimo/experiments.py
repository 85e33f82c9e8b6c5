"""Config-driven experiments emitting CSV artifacts.

Each experiment kind reproduces one family of study outputs:

* ``convergence``  trial-averaged per-iteration curves (residual norm, true
                   residual gap, detection error) for a list of detectors at
                   one SNR, plus a single-trial trace per detector.
* ``heuristic``    estimated mean condition numbers per correlation level and
                   the matrix-vector format the selection rule picks.
* ``ber``          Monte-Carlo bit-error-rate sweeps.
* ``cost``         weighted multiplication counts and reduction percentages.
* ``break_even``   block-size / dimension sweeps with measured iteration
                   counts and the resulting cost crossover.
* ``gram_stats``   concentration statistics of the Gram matrix.

Determinism: all randomness is keyed per (seed, experiment context, grid
point, trial), so byte-identical CSV output is produced for a fixed config
and seed regardless of chunking or worker count.  Floats are serialized with
``repr`` (shortest round-trip form).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fpmimo import __version__
from fpmimo.analysis import (
    break_even,
    cost_model,
    estimate_mean_condition_number,
    heuristic_precision,
)
from fpmimo.channel import ChannelConfig, gram_convergence_stat
from fpmimo.detect import (
    BERConfig,
    DetectorSpec,
    iterations_to_match,
    run_ber_sweep,
    simulate_trials,
)
from fpmimo.errors import ContractViolation
from fpmimo.formats import get_format, registered_formats
from fpmimo.linalg import _norm2_batch, _solve_direct_batch
from fpmimo.solvers import PrecisionConfig, build_blocks_batch, run_batch

__all__ = ["ConfigError", "load_config", "validate_config", "run_experiment"]

KINDS = ("convergence", "heuristic", "ber", "cost", "break_even", "gram_stats")


class ConfigError(ValueError):
    """A config file failed schema or semantic validation."""


def load_config(path) -> dict:
    """Parse a TOML experiment config."""
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _check(diags, cond, path, message):
    if not cond:
        diags.append(f"{path}: {message}")
    return cond


def _channel_from(cfg: dict, diags: list[str]) -> ChannelConfig | None:
    ch = cfg.get("channel")
    if not _check(diags, isinstance(ch, dict), "channel", "missing table"):
        return None
    try:
        return ChannelConfig(
            M=int(ch.get("M", 0)), K=int(ch.get("K", 0)),
            N_UE=int(ch.get("N_UE", 1)),
            zeta_r=float(ch.get("zeta_r", 0.0)),
            zeta_t=float(ch.get("zeta_t", 0.0)),
            block_diag_users=bool(ch.get("block_diag_users", False)),
        )
    except (ContractViolation, TypeError, ValueError) as exc:
        diags.append(f"channel: {exc}")
        return None


def _detectors_from(cfg: dict, channel, diags: list[str]) -> list[DetectorSpec]:
    entries = cfg.get("detectors")
    out = []
    if not _check(diags, isinstance(entries, list) and entries,
                  "detectors", "need at least one [[detectors]] entry"):
        return out
    for i, entry in enumerate(entries):
        path = f"detectors[{i}]"
        try:
            det = DetectorSpec(
                algorithm=str(entry.get("algorithm", "")),
                iters=int(entry.get("iters", cfg.get("run", {}).get("iters", 10))),
                L=entry.get("L"),
                work=str(entry.get("work", "fp64")),
                matvec=str(entry.get("matvec", "fp64")),
                inner=str(entry.get("inner", "fp64")),
                rtol=float(entry.get("rtol", 1e-6)),
                rho_update=str(entry.get("rho_update", "as_written")),
                label=entry.get("label"),
            )
        except (ContractViolation, TypeError, ValueError) as exc:
            diags.append(f"{path}: {exc}")
            continue
        for field in ("work", "matvec", "inner"):
            name = getattr(det, field)
            if name not in registered_formats():
                diags.append(
                    f"{path}.{field}: unknown format {name!r}; registry has "
                    f"{sorted(registered_formats())}")
        if det.algorithm == "fp_bj_cg" and channel is not None:
            _check(diags, channel.N % int(det.L) == 0, f"{path}.L",
                   f"L must divide N (={channel.N})")
        out.append(det)
    return out


def validate_config(cfg: dict) -> list[str]:
    """Schema and semantic checks; returns a list of diagnostics (empty = ok)."""
    diags: list[str] = []
    kind = cfg.get("kind")
    if not _check(diags, kind in KINDS, "kind", f"must be one of {KINDS}"):
        return diags
    if "seed" in cfg:
        _check(diags, isinstance(cfg["seed"], int) and cfg["seed"] >= 0,
               "seed", "must be a nonnegative integer")

    if kind in ("convergence", "ber", "break_even", "heuristic"):
        channel = _channel_from(cfg, diags)
    else:
        channel = None

    run = cfg.get("run", {})
    if kind in ("convergence", "ber"):
        _detectors_from(cfg, channel, diags)
        _check(diags, int(run.get("trials", 0)) >= 1, "run.trials",
               "must be a positive integer")
    if kind == "ber":
        grid = run.get("snr_db")
        _check(diags, isinstance(grid, list) and grid, "run.snr_db",
               "must be a nonempty list of SNR points")
    if kind == "convergence":
        _check(diags, isinstance(run.get("snr_db", 20.0), (int, float)),
               "run.snr_db", "must be one SNR value")
        _check(diags, int(run.get("iters", 0)) >= 1, "run.iters",
               "must be a positive iteration budget")
    if kind == "heuristic":
        h = cfg.get("heuristic", {})
        _check(diags, isinstance(h.get("zetas"), list) and h.get("zetas"),
               "heuristic.zetas", "must be a nonempty list")
        for j, name in enumerate(h.get("candidates", ["bfloat16", "fp16", "fp32"])):
            if name not in registered_formats():
                diags.append(f"heuristic.candidates[{j}]: unknown format {name!r}")
        _check(diags, int(h.get("trials", 100)) >= 100, "heuristic.trials",
               "need at least 100 trials for a stable mean")
    if kind == "cost":
        entries = cfg.get("cost", {}).get("entries")
        _check(diags, isinstance(entries, list) and entries, "cost.entries",
               "need at least one [[cost.entries]] table")
    if kind == "break_even":
        be = cfg.get("break_even", {})
        _check(diags, be.get("sweep") in ("L", "N"), "break_even.sweep",
               "must be 'L' or 'N'")
        _check(diags, isinstance(be.get("values"), list) and be.get("values"),
               "break_even.values", "must be a nonempty list")
    if kind == "gram_stats":
        g = cfg.get("gram_stats", {})
        _check(diags, isinstance(g.get("Ms"), list) and g.get("Ms"),
               "gram_stats.Ms", "must be a nonempty list of antenna counts")
        _check(diags, int(g.get("trials", 0)) >= 1, "gram_stats.trials",
               "must be positive")
    return diags


@dataclass
class _MeanCurves:
    """Trial-averaged per-iteration statistics for one detector."""

    res_norm: np.ndarray
    gap: np.ndarray
    sym_mse: np.ndarray
    divergence_rate: float
    first_trace: dict


def _run_detector_chunk(det: DetectorSpec, batch: dict, iters: int,
                        x_hat: np.ndarray, a_norm: np.ndarray) -> dict:
    s = batch["symbols"]
    if det.algorithm == "lmmse":
        err = _norm2_batch(x_hat - s) ** 2
        zero = np.zeros((iters + 1, s.shape[0]))
        return {"res": zero, "gap": zero, "mse": np.tile(err, (iters + 1, 1)),
                "div": 0, "alphas": None, "betas": None}
    blocks = None
    if det.algorithm == "fp_bj_cg":
        blocks = build_blocks_batch(batch["A"], det.L)
    result = run_batch(batch["A"], batch["b"], iters, det.precision(),
                       blocks=blocks, rho_update=det.rho_update, rtol=det.rtol,
                       x_ref=x_hat, a_norm=a_norm, record_gaps=True,
                       record_iterates=True)
    mse = _norm2_batch(result.iterates - s[None]) ** 2
    return {"res": result.residual_norms, "gap": result.residual_gaps,
            "mse": mse, "div": int(np.sum(result.diverged_at >= 0)),
            "alphas": result.alphas[:, 0], "betas": result.betas[:, 0]}


def _mean_curves(channel: ChannelConfig, detectors, snr_db: float, trials: int,
                 iters: int, seed: int, *, epsilon_db=None, chunk=500,
                 convention="receive_total", threads=1, context=4):
    """Matched-trial mean curves for every detector plus the LMMSE level."""
    cfg = BERConfig(channel=channel, detectors=tuple(detectors),
                    snr_grid=(snr_db,), trials=trials, seed=seed,
                    epsilon_db=epsilon_db, snr_convention=convention,
                    chunk=chunk, context=context)
    chunks = [range(lo, min(lo + chunk, trials)) for lo in range(0, trials, chunk)]

    def _one(ids):
        batch = simulate_trials(cfg, 0, ids)
        x_hat = _solve_direct_batch(batch["A"], batch["b"])
        w = np.linalg.eigvalsh(batch["A"])
        a_norm = np.maximum(np.abs(w[:, 0]), np.abs(w[:, -1]))
        out = {}
        for det in detectors:
            out[det.name] = _run_detector_chunk(det, batch, iters, x_hat, a_norm)
        out["_lmmse_mse"] = float(np.sum(_norm2_batch(x_hat - batch["symbols"]) ** 2))
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(_one, chunks))
    else:
        partials = [_one(ids) for ids in chunks]

    curves: dict[str, _MeanCurves] = {}
    lmmse_level = sum(p["_lmmse_mse"] for p in partials) / trials
    for det in detectors:
        res = sum(np.sum(p[det.name]["res"], axis=1) for p in partials) / trials
        gap = sum(np.sum(p[det.name]["gap"], axis=1) for p in partials) / trials
        mse = sum(np.sum(p[det.name]["mse"], axis=1) for p in partials) / trials
        div = sum(p[det.name]["div"] for p in partials) / trials
        first = partials[0][det.name]
        curves[det.name] = _MeanCurves(
            res_norm=np.asarray(res), gap=np.asarray(gap), sym_mse=np.asarray(mse),
            divergence_rate=div,
            first_trace={"res": np.asarray(first["res"])[:, 0],
                         "gap": np.asarray(first["gap"])[:, 0],
                         "alphas": first["alphas"], "betas": first["betas"]},
        )
    return curves, lmmse_level


def _run_convergence(cfg: dict, out: Path, seed: int, threads: int) -> list[str]:
    channel = _channel_from(cfg, [])
    detectors = _detectors_from(cfg, channel, [])
    run = cfg.get("run", {})
    iters = int(run.get("iters", 40))
    trials = int(run.get("trials", 200))
    snr_db = float(run.get("snr_db", 20.0))
    margin = float(run.get("margin", 1.1))
    curves, lmmse_level = _mean_curves(
        channel, detectors, snr_db, trials, iters, seed,
        epsilon_db=run.get("epsilon_db"), chunk=int(run.get("chunk", 500)),
        convention=run.get("snr_convention", "receive_total"), threads=threads)
    files = []
    summary_rows = []
    for det in detectors:
        mc = curves[det.name]
        name = f"convergence_{det.name}.csv"
        _write_csv(out / name, ["iter", "res_norm", "gap", "sym_mse"],
                   [[i, mc.res_norm[i], mc.gap[i], mc.sym_mse[i]]
                    for i in range(len(mc.res_norm))])
        files.append(name)
        tr = mc.first_trace
        tname = f"trace_{det.name}.csv"
        trace_rows = []
        for i in range(len(tr["res"])):
            alpha = tr["alphas"][i - 1] if tr["alphas"] is not None and i >= 1 else ""
            beta = tr["betas"][i - 1] if tr["betas"] is not None and i >= 1 else ""
            trace_rows.append([i, tr["res"][i], tr["gap"][i], alpha, beta])
        _write_csv(out / tname, ["iter", "res_norm", "gap", "alpha", "beta"],
                   trace_rows)
        files.append(tname)
        reached = iterations_to_match(mc.sym_mse, lmmse_level, margin)
        summary_rows.append([
            det.name, det.work, det.matvec, det.inner, det.L or "",
            channel.zeta_t, iters,
            reached if reached is not None else "",
            mc.gap[-1], mc.sym_mse[-1], mc.divergence_rate, lmmse_level,
        ])
    _write_csv(out / "summary.csv",
               ["detector", "precision_w", "precision_mv", "precision_ip", "L",
                "zeta", "iters", "iters_to_lmmse", "final_gap", "final_sym_mse",
                "divergence_rate", "lmmse_mse"],
               summary_rows)
    files.append("summary.csv")
    return files


def _run_heuristic(cfg: dict, out: Path, seed: int, threads: int) -> list[str]:
    channel = _channel_from(cfg, [])
    h = cfg.get("heuristic", {})
    zetas = [float(z) for z in h.get("zetas", [0.0])]
    trials = int(h.get("trials", 200))
    snr_db = float(h.get("snr_db", 20.0))
    kind = h.get("kind", "lmmse")
    cand = [get_format(n) for n in h.get("candidates", ["bfloat16", "fp16", "fp32"])]
    rows = []
    for zi, zeta in enumerate(zetas):
        ch = ChannelConfig(M=channel.M, K=channel.K, N_UE=channel.N_UE,
                           zeta_r=zeta, zeta_t=zeta,
                           block_diag_users=channel.block_diag_users)
        sigma_n2 = (ch.N / ch.M) * 10.0 ** (-snr_db / 10.0)
        kappa = estimate_mean_condition_number(
            ch, kind, sigma_n2, trials, seed=seed, context=5 + zi)
        decision = heuristic_precision(ch.N, kappa, cand)
        rows.append([zeta, ch.N, trials, kappa, decision.threshold,
                     decision.chosen.name, decision.exhausted])
    _write_csv(out / "heuristic.csv",
               ["zeta", "N", "trials", "kappa_mean", "threshold",
                "chosen_format", "exhausted"], rows)
    return ["heuristic.csv"]


def _run_ber(cfg: dict, out: Path, seed: int, threads: int) -> list[str]:
    channel = _channel_from(cfg, [])
    detectors = _detectors_from(cfg, channel, [])
    run = cfg.get("run", {})
    ber_cfg = BERConfig(
        channel=channel, detectors=tuple(detectors),
        snr_grid=tuple(float(s) for s in run.get("snr_db", [])),
        trials=int(run.get("trials", 1000)), seed=seed,
        epsilon_db=run.get("epsilon_db"),
        snr_convention=run.get("snr_convention", "receive_total"),
        chunk=int(run.get("chunk", 1000)),
    )
    curves = run_ber_sweep(ber_cfg)
    rows = []
    files = []
    for curve in curves:
        det = curve.detector
        for p in curve.points:
            rows.append([det.name, det.work, det.matvec, det.inner,
                         det.L or "", curve.zeta, p.snr_db, det.iters,
                         p.trials, p.bit_errors, p.ber, p.ci_low, p.ci_high,
                         p.divergence_rate])
        pname = f"ber_plotdata_{det.name}.csv"
        _write_csv(out / pname, ["snr_db", "ber"],
                   [[p.snr_db, p.ber] for p in curve.points])
        files.append(pname)
    _write_csv(out / "ber.csv",
               ["detector", "precision_w", "precision_mv", "precision_ip", "L",
                "zeta", "snr_db", "iters", "trials", "bit_errors", "ber",
                "ci_low", "ci_high", "divergence_rate"], rows)
    files.append("ber.csv")
    return files


def _run_cost(cfg: dict, out: Path, seed: int, threads: int) -> list[str]:
    table = cfg.get("cost", {})
    N = int(table.get("N", 32))
    lmmse_constant = float(table.get("lmmse_constant", 1.0))
    reports = []
    for entry in table.get("entries", []):
        prec = PrecisionConfig(work=get_format(entry.get("work", "fp64")),
                               matvec=get_format(entry.get("matvec", "fp64")),
                               inner=get_format(entry.get("inner", "fp64")))
        rep = cost_model(entry["algorithm"], N, iters=int(entry.get("iters", 0)),
                         L=entry.get("L"), prec=prec,
                         lmmse_constant=lmmse_constant)
        reports.append((entry, rep))
    base_cg = next((r.total_units for e, r in reports if e["algorithm"] == "cg"), None)
    base_lmmse = next((r.total_units for e, r in reports if e["algorithm"] == "lmmse"), None)
    rows = []
    for entry, rep in reports:
        red_cg = "" if not base_cg else 100.0 * (1.0 - rep.total_units / base_cg)
        red_lm = "" if not base_lmmse else 100.0 * (1.0 - rep.total_units / base_lmmse)
        rows.append([rep.algorithm, entry.get("work", "fp64"),
                     entry.get("matvec", "fp64"), entry.get("L", ""),
                     rep.iterations, rep.setup_units, rep.per_iter_units,
                     rep.total_units, red_cg, red_lm])
    _write_csv(out / "cost.csv",
               ["algorithm", "precision_w", "precision_mv", "L", "iters",
                "setup_units", "per_iter_units", "total_units",
                "reduction_vs_cg_pct", "reduction_vs_lmmse_pct"], rows)
    return ["cost.csv"]


def _measure_counts(channel, snr_db, trials, iters, seed, margin, prec_names,
                    L, threads, context):
    """Mean-curve iteration counts for plain and preconditioned mixed CG."""
    detectors = [
        DetectorSpec(algorithm="fp_cg", iters=iters, work=prec_names[0],
                     matvec=prec_names[1], inner=prec_names[2], label="sweep_cg"),
        DetectorSpec(algorithm="fp_bj_cg", iters=iters, L=L,
                     work=prec_names[0], matvec=prec_names[1],
                     inner=prec_names[2], label="sweep_pcg"),
    ]
    curves, lmmse_level = _mean_curves(channel, detectors, snr_db, trials,
                                       iters, seed, threads=threads,
                                       context=context)
    k_cg = iterations_to_match(curves["sweep_cg"].sym_mse, lmmse_level, margin)
    k_pcg = iterations_to_match(curves["sweep_pcg"].sym_mse, lmmse_level, margin)
    return k_cg, k_pcg


def _run_break_even(cfg: dict, out: Path, seed: int, threads: int) -> list[str]:
    channel = _channel_from(cfg, [])
    be = cfg.get("break_even", {})
    sweep = be.get("sweep", "L")
    values = [int(v) for v in be.get("values", [])]
    trials = int(be.get("trials", 200))
    snr_db = float(be.get("snr_db", 20.0))
    budget = int(be.get("iters_budget", 40))
    margin = float(be.get("margin", 1.1))
    prec_names = (be.get("work", "fp64"), be.get("matvec", "fp64"),
                  be.get("inner", "fp64"))
    prec = PrecisionConfig(work=get_format(prec_names[0]),
                           matvec=get_format(prec_names[1]),
                           inner=get_format(prec_names[2]))
    rows = []
    diffs = []
    for vi, value in enumerate(values):
        if sweep == "L":
            ch, L = channel, value
        else:
            ch = ChannelConfig(M=channel.M, K=value, N_UE=1,
                               zeta_r=channel.zeta_r, zeta_t=channel.zeta_t,
                               block_diag_users=channel.block_diag_users)
            L = int(be.get("L", 8))
        k_cg, k_pcg = _measure_counts(ch, snr_db, trials, budget, seed, margin,
                                      prec_names, L, threads, context=6)
        if k_cg is None or k_pcg is None:
            rows.append([value, k_cg or "", k_pcg or "", "", "", "", ""])
            diffs.append((value, math.nan))
            continue
        sizes = [min(L, ch.N - s) for s in range(0, ch.N, L)]
        cost_cg = cost_model("fp_cg", ch.N, iters=k_cg, prec=prec).total_units
        cost_pcg = cost_model("fp_bj_cg", ch.N, iters=k_pcg, prec=prec,
                              block_sizes=sizes).total_units
        rep = break_even(ch.N, L, k_cg, k_pcg, prec)
        rows.append([value, k_cg, k_pcg, cost_cg, cost_pcg,
                     rep.threshold_iters, cost_pcg < cost_cg])
        diffs.append((value, cost_cg - cost_pcg))
    crossover = ""
    for (v0, d0), (v1, d1) in zip(diffs, diffs[1:]):
        if math.isnan(d0) or math.isnan(d1):
            continue
        if d0 >= 0 > d1:
            crossover = v0 + (v1 - v0) * d0 / (d0 - d1)
            break
    _write_csv(out / "break_even.csv",
               [f"sweep_{sweep}", "k_cg", "k_pcg", "cost_cg", "cost_pcg",
                "threshold_iters", "pcg_advantageous"], rows)
    _write_csv(out / "break_even_summary.csv",
               ["sweep", "crossover"], [[sweep, crossover]])
    return ["break_even.csv", "break_even_summary.csv"]


def _run_gram_stats(cfg: dict, out: Path, seed: int, threads: int) -> list[str]:
    g = cfg.get("gram_stats", {})
    Ms = [int(m) for m in g.get("Ms", [64, 256])]
    zetas = [float(z) for z in g.get("zetas", [0.0, 0.5, 0.8])]
    trials = int(g.get("trials", 1000))
    var_trials = int(g.get("var_trials", trials))
    pair = tuple(g.get("pair", [0, 1]))
    rows = []
    for zi, zeta in enumerate(zetas):
        frob = gram_convergence_stat(Ms, zeta, trials, pair=pair, seed=seed,
                                     context=8)
        if var_trials != trials:
            var = gram_convergence_stat(Ms, zeta, var_trials, pair=pair,
                                        seed=seed, context=9)
        else:
            var = frob
        for fr, vr in zip(frob, var):
            rows.append([fr["M"], zeta, fr["trials"], fr["frob_dev_mean"],
                         vr["var_sample"], vr["var_closed_form"], vr["rel_err"]])
    _write_csv(out / "gram_stats.csv",
               ["M", "zeta", "trials", "frob_dev_mean", "var_sample",
                "var_closed_form", "rel_err"], rows)
    return ["gram_stats.csv"]


_RUNNERS = {
    "convergence": _run_convergence,
    "heuristic": _run_heuristic,
    "ber": _run_ber,
    "cost": _run_cost,
    "break_even": _run_break_even,
    "gram_stats": _run_gram_stats,
}


def run_experiment(cfg: dict, out_dir, *, seed: int | None = None,
                   threads: int = 1) -> dict:
    """Validate, run, and write one experiment; returns the manifest.

    Partial outputs are removed if the run fails.
    """
    diags = validate_config(cfg)
    if diags:
        raise ConfigError("; ".join(diags))
    seed = int(cfg.get("seed", 0)) if seed is None else int(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    preexisting = {p.name for p in out.iterdir()}
    try:
        files = _RUNNERS[cfg["kind"]](cfg, out, seed, threads)
    except BaseException:
        for p in out.iterdir():
            if p.name not in preexisting and p.is_file():
                p.unlink()
        raise
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    manifest = {
        "kind": cfg["kind"],
        "seed": seed,
        "config": cfg,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "version": __version__,
        "wall_time_s": round(time.time() - started, 3),
        "outputs": files,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    return manifest
