"""Command line front end: simulate, analyze, bootstrap, phase-match.

Exit codes: 0 on success, 2 for configuration problems, 3 when the physics
or the optimizer reports an infeasible request (no phase-matching point, no
window placement under the QBER bound, a background level outside the
calibrated range).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .analysis import (
    InfeasibleWindowError,
    PeaksUnresolvedError,
    WindowPair,
    bootstrap_sd_over_mean,
    compute_metrics,
    histogram_pair,
    optimize_strategy_a,
    optimize_strategy_b,
    sift,
)
from .config import (
    ConfigError,
    config_as_dict,
    load_config,
    packaged_config,
    write_config,
)
from .detection import CalibrationRangeError
from .protocol import ExperimentConfig, run_b92, run_b92_batch, source_operating_point
from .spdc import NoPhaseMatchError
from .timetag import TagFileError, read_tags, write_tags

DEFAULT_FIXTURE = "fixture_20mm_night"
TAG_FILES = ("alice_herald.txt", "bob_d0.txt", "bob_d1.txt")


def _write_text_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path: Path | None, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        _write_text_atomic(Path(path), text)


def _resolve_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        config = load_config(args.config)
    else:
        config = packaged_config(DEFAULT_FIXTURE)
    if getattr(args, "duration_s", None) is not None:
        from dataclasses import replace
        config = replace(config, run=replace(config.run,
                                             duration_s=args.duration_s))
    return config


def _optimize(hist_v, hist_d, strategy: str, threshold: float,
              symmetry_tol: float) -> WindowPair:
    if strategy == "A":
        return optimize_strategy_a(hist_v, hist_d, threshold, symmetry_tol)
    return optimize_strategy_b(hist_v, hist_d, threshold)


def _analysis_payload(alice, d0, d1, duration_s, strategy, analysis_cfg,
                      threshold) -> dict:
    hist_v, hist_d = histogram_pair(alice, d0, d1,
                                    analysis_cfg.bin_width_ps,
                                    analysis_cfg.range_ps())
    windows = _optimize(hist_v, hist_d, strategy, threshold,
                        analysis_cfg.symmetry_tol_pp)
    key = sift(alice, d0, d1, windows)
    metrics = compute_metrics(key, duration_s)
    return {
        "strategy": strategy,
        "qber_threshold_pct": threshold,
        "windows": {
            "window1_ps": list(windows.window1_ps),
            "window2_ps": list(windows.window2_ps),
        },
        "metrics": {
            "key_rate_khz": metrics.key_rate_khz,
            "qber_pct": metrics.qber_pct,
            "asymmetry_pct": metrics.asymmetry_pct,
            "sifted_length": metrics.sifted_length,
            "error_count": metrics.error_count,
        },
        "singles_rates_hz": {
            "alice_herald": alice.rate_hz,
            "bob_d0": d0.rate_hz,
            "bob_d1": d1.rate_hz,
        },
    }


def _cmd_simulate(args) -> int:
    config = _resolve_config(args)
    threshold = (args.qber_threshold if args.qber_threshold is not None
                 else config.analysis.qber_threshold_pct)
    out_dir = Path(args.out)
    run = run_b92(config, args.seed)

    out_dir.mkdir(parents=True, exist_ok=True)
    for name, series in zip(TAG_FILES, (run.alice_herald, run.bob_d0,
                                        run.bob_d1)):
        write_tags(series, out_dir / name, channel=name.rsplit(".", 1)[0])

    payload = {
        "seed": args.seed,
        "config": config_as_dict(config),
        "operating_point": {
            "pair_rate_hz": run.pair_rate_hz,
            "temperature_c": run.temperature_c,
            "background_incident_hz": run.background_incident_hz,
        },
    }
    payload.update(_analysis_payload(
        run.alice_herald, run.bob_d0, run.bob_d1, run.duration_s,
        args.strategy, config.analysis, threshold,
    ))
    _write_json(out_dir / "summary.json", payload)
    return 0


def _cmd_analyze(args) -> int:
    in_dir = Path(args.in_dir)
    series = {}
    for name in TAG_FILES:
        path = in_dir / name
        if not path.exists():
            raise ConfigError(f"missing tag file {path}")
        series[name], _ = read_tags(path)
    alice = series[TAG_FILES[0]]
    config = _resolve_config(args)
    threshold = (args.qber_threshold if args.qber_threshold is not None
                 else config.analysis.qber_threshold_pct)
    payload = _analysis_payload(
        alice, series[TAG_FILES[1]], series[TAG_FILES[2]], alice.duration_s,
        args.strategy, config.analysis, threshold,
    )
    _write_json(Path(args.out) if args.out else None, payload)
    return 0


def _cmd_bootstrap(args) -> int:
    config = _resolve_config(args)
    threshold = (args.qber_threshold if args.qber_threshold is not None
                 else config.analysis.qber_threshold_pct)
    k_values = [float(v) for v in args.k_values.split(",") if v.strip()]
    if not k_values:
        raise ConfigError("no accumulation windows given in --k-values")
    if max(k_values) > config.run.duration_s:
        raise ConfigError("an accumulation window exceeds the run duration")

    runs = run_b92_batch(config, args.datasets, args.seed)
    first = runs[0]
    hist_v, hist_d = histogram_pair(
        first.alice_herald, first.bob_d0, first.bob_d1,
        config.analysis.bin_width_ps, config.analysis.range_ps(),
    )
    windows = _optimize(hist_v, hist_d, args.strategy, threshold,
                        config.analysis.symmetry_tol_pp)
    rng = np.random.default_rng(args.seed)
    curve = bootstrap_sd_over_mean(runs, windows, k_values,
                                   args.iterations, rng)

    from scipy.stats import spearmanr
    rho, pvalue = spearmanr(curve.k_values_s, curve.sd_over_mean_pct)
    payload = {
        "seed": args.seed,
        "datasets": args.datasets,
        "iterations": args.iterations,
        "duration_s": config.run.duration_s,
        "strategy": args.strategy,
        "windows": {
            "window1_ps": list(windows.window1_ps),
            "window2_ps": list(windows.window2_ps),
        },
        "k_values_s": list(curve.k_values_s),
        "sd_over_mean_pct": list(curve.sd_over_mean_pct),
        "mean_key_rate_khz": list(curve.mean_key_rate_khz),
        "spearman_rho": float(rho),
        "spearman_p": float(pvalue),
    }
    _write_json(Path(args.out) if args.out else None, payload)
    return 0


def _cmd_phase_match(args) -> int:
    config = _resolve_config(args)
    temperature, rate = source_operating_point(config)
    payload = {
        "temperature_c": temperature,
        "pair_rate_hz": rate,
        "crystal_length_mm": config.source.crystal_length_mm,
        "poling_period_um": config.source.poling_period_um,
        "pump_wavelength_nm": config.source.pump_wavelength_nm,
        "pump_power_mw": config.source.pump_power_mw,
    }
    _write_json(Path(args.out) if args.out else None, payload)
    return 0


def _cmd_write_config(args) -> int:
    config = _resolve_config(args)
    write_config(config, args.out)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="b92sim",
        description="Simulate and analyze a heralded-photon B92 experiment.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, seed=True):
        p.add_argument("--config", help="experiment configuration file "
                       f"(default: packaged {DEFAULT_FIXTURE})")
        if seed:
            p.add_argument("--seed", type=int, default=0,
                           help="root RNG seed (default 0)")

    sim = sub.add_parser("simulate", help="run one accumulation and analyze it")
    add_common(sim)
    sim.add_argument("--duration-s", type=float, default=None,
                     help="override the configured accumulation time")
    sim.add_argument("--strategy", choices=("A", "B"), default="A")
    sim.add_argument("--qber-threshold", type=float, default=None,
                     help="QBER bound in percent (default from config)")
    sim.add_argument("--out", required=True,
                     help="output directory for tag files and summary.json")
    sim.set_defaults(func=_cmd_simulate)

    ana = sub.add_parser("analyze", help="analyze recorded tag files")
    add_common(ana, seed=False)
    ana.add_argument("--in", dest="in_dir", required=True,
                     help="directory holding the three tag files")
    ana.add_argument("--strategy", choices=("A", "B"), default="A")
    ana.add_argument("--qber-threshold", type=float, default=None)
    ana.add_argument("--out", default=None,
                     help="summary JSON path (default: stdout)")
    ana.set_defaults(func=_cmd_analyze)

    boot = sub.add_parser("bootstrap",
                          help="bootstrap key-rate spread vs accumulation time")
    add_common(boot)
    boot.add_argument("--duration-s", type=float, default=None)
    boot.add_argument("--datasets", type=int, default=20)
    boot.add_argument("--iterations", type=int, default=20)
    boot.add_argument("--k-values", default="1,2,3,4,6,8,10,12",
                      help="comma-separated accumulation windows in seconds")
    boot.add_argument("--strategy", choices=("A", "B"), default="A")
    boot.add_argument("--qber-threshold", type=float, default=None)
    boot.add_argument("--out", default=None)
    boot.set_defaults(func=_cmd_bootstrap)

    pm = sub.add_parser("phase-match",
                        help="solve the degenerate phase-matching temperature")
    add_common(pm, seed=False)
    pm.add_argument("--out", default=None)
    pm.set_defaults(func=_cmd_phase_match)

    wc = sub.add_parser("write-config",
                        help="write a fully populated configuration file")
    add_common(wc, seed=False)
    wc.add_argument("--out", required=True)
    wc.set_defaults(func=_cmd_write_config)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TagFileError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InfeasibleWindowError, PeaksUnresolvedError, NoPhaseMatchError,
            CalibrationRangeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
