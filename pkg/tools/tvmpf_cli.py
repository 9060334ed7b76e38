# tools/tvmpf_cli.py

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

PROJECT_ROOT = Path(__file__).resolve().parents[1]
sys.path.append(str(PROJECT_ROOT))

import numpy as np
import pandas as pd
from scipy import fft as sp_fft

from core import __version__, metrics
from core.config import ResolvedConfig, build_config, config_schema, load_settings, parse_config, snr_range
from core.models import WAVEFORM_KINDS, Band, PhaseCodedSpec, SampledSignal
from core.photonic_chain import mpf_center_frequency
from core.waveforms import derive_control, phase_code, synthesize
from processing.pipeline import (
    default_probe_grid,
    measure_response,
    run_experiment,
    run_with_signal,
    summarize_response,
)
from processing.sweep_runner import SweepRunner, find_crossover
from storage.manifest import (
    RunManifest,
    RunRecord,
    improvement_db,
    verify_manifest,
    write_manifest,
    write_response_csv,
    write_spectrogram_csv,
    write_spectrum_csv,
    write_table,
)
from storage.signal_io import SignalFormatError, read_signal, write_signal
from utils.logger import setup_logger

logger = logging.getLogger("TVMPF-Sim.CLI")

# 取值可能以负号开头的选项，需与后续参数合并后再交给 argparse
_VALUE_FLAGS = ("--snr", "--ctrl")


def _attach_negative_values(argv: Sequence[str]) -> List[str]:
    merged: List[str] = []
    items = list(argv)
    i = 0
    while i < len(items):
        item = items[i]
        if item in _VALUE_FLAGS and i + 1 < len(items) and items[i + 1].startswith("-") and items[i + 1][1:2].isdigit():
            merged.append(f"{item}={items[i + 1]}")
            i += 2
            continue
        merged.append(item)
        i += 1
    return merged


def parse_snr_arg(text: str) -> List[float]:
    """'start:step:stop' 闭区间或单个数值。"""
    parts = text.split(":")
    if len(parts) == 1:
        return [float(parts[0])]
    if len(parts) != 3:
        raise ValueError(f"SNR range must be start:step:stop, got {text!r}")
    start, step, stop = (float(p) for p in parts)
    return snr_range(start, stop, step)


def _snr_value(text: str) -> Optional[float]:
    return None if text.lower() == "none" else float(text)


def _resolve(args: argparse.Namespace) -> ResolvedConfig:
    """配置文件（或内置默认值）叠加命令行覆盖项后重新校验。"""
    resolved = parse_config(args.config) if args.config else ResolvedConfig()
    raw = resolved.echo()
    kind = getattr(args, "waveform", None)
    if kind and raw["waveform"]["kind"] != kind:
        raw["waveform"] = WAVEFORM_KINDS[kind]().model_dump(mode="json")
    if getattr(args, "seed", None) is not None:
        raw["chain"]["seed"] = args.seed
    resolved = build_config(raw, Path(args.config) if args.config else None)
    logger.debug(f"Effective configuration: {json.dumps(resolved.echo(), sort_keys=True)}")
    return resolved


def _new_manifest(command: str, resolved: ResolvedConfig) -> RunManifest:
    return RunManifest(command=command, tool_version=__version__, config=resolved.echo())


def _finish(manifest: RunManifest, out_dir: Path, started: float) -> Path:
    manifest.wall_clock_s = round(time.perf_counter() - started, 3)
    return write_manifest(manifest, out_dir)


def cmd_gen(args: argparse.Namespace, out_dir: Path) -> int:
    started = time.perf_counter()
    resolved = _resolve(args)
    cfg, spec = resolved.chain, resolved.waveform
    manifest = _new_manifest("gen", resolved)
    manifest.seeds = [cfg.seed]

    signal, _ = synthesize(spec, cfg.sample_rate, cfg.duration, seed=cfg.seed)
    control_spec = derive_control(spec, cfg.sbs.bfs, cfg.sideband_sign)
    control, _ = synthesize(control_spec, cfg.sample_rate, cfg.duration, seed=cfg.seed)
    for name, record in ((f"{spec.kind}_signal.f64", signal), (f"{spec.kind}_control.f64", control)):
        path = write_signal(record, out_dir / name)
        manifest.add_output(path, out_dir)
        manifest.add_output(path.with_name(path.name + ".json"), out_dir)
    _finish(manifest, out_dir, started)
    print(f"wrote {spec.kind} signal and control ({len(signal)} samples) to {out_dir}")
    return 0


def cmd_response(args: argparse.Namespace, out_dir: Path) -> int:
    started = time.perf_counter()
    resolved = _resolve(args)
    cfg, exp = resolved.chain, resolved.experiment
    ctrl_list = [float(c) for c in args.ctrl.split(",")] if args.ctrl else list(exp.control_freqs)
    manifest = _new_manifest("response", resolved)

    curves: Dict[float, Any] = {}
    rows = []
    for f_ctrl in ctrl_list:
        center = mpf_center_frequency(f_ctrl, cfg.sbs.bfs, cfg.sideband_sign)
        probes = default_probe_grid(center, exp.probe_span, exp.probe_step)
        curve = measure_response(f_ctrl, cfg, probes, n_jobs=args.n_jobs)
        summary = summarize_response(curve)
        curves[f_ctrl] = curve
        rows.append({"f_ctrl_hz": f_ctrl, **summary._asdict()})
        logger.info(
            f"control {f_ctrl / 1e9:.3f} GHz: peak {summary.peak_freq / 1e9:.4f} GHz, "
            f"-3 dB width {summary.bw3db / 1e6:.2f} MHz"
        )

    for path in (
        write_response_csv(curves, out_dir / "response.csv"),
        write_table(pd.DataFrame(rows, columns=["f_ctrl_hz", "peak_freq", "bw3db", "peak_db"]),
                    out_dir / "response_summary.csv"),
    ):
        manifest.add_output(path, out_dir)
    _finish(manifest, out_dir, started)
    print(f"response measured for {len(ctrl_list)} control frequencies; results in {out_dir}")
    return 0


def _write_run_outputs(artifacts, resolved: ResolvedConfig, manifest: RunManifest, out_dir: Path) -> None:
    exp, cfg = resolved.experiment, resolved.chain
    display = Band(f_low=cfg.bpf.band.f_low, f_high=cfg.bpf.band.f_high)
    for name in ("noisy_input", "reference", "filtered"):
        record: SampledSignal = getattr(artifacts, name)
        path = write_signal(record, out_dir / f"{name}.f64")
        manifest.add_output(path, out_dir)
        manifest.add_output(path.with_name(path.name + ".json"), out_dir)

        tfd = metrics.spectrogram(record, window_len=exp.window_len, hop=exp.hop, band=display)
        manifest.add_output(write_spectrogram_csv(tfd, out_dir / f"{name}_spectrogram.csv"), out_dir)
        freqs, power_db = metrics.power_spectrum(record)
        manifest.add_output(write_spectrum_csv(freqs, power_db, out_dir / f"{name}_spectrum.csv"), out_dir)


def cmd_run(args: argparse.Namespace, out_dir: Path) -> int:
    started = time.perf_counter()
    resolved = _resolve(args)
    cfg, spec = resolved.chain, resolved.waveform
    snr = _snr_value(args.snr) if args.snr is not None else resolved.experiment.snr_db
    manifest = _new_manifest("run", resolved)
    manifest.seeds = [cfg.seed]

    if args.signal_file:
        imported = read_signal(args.signal_file)
        if not isinstance(imported, SampledSignal):
            raise SignalFormatError("imported drive must be a real signal", Path(args.signal_file))
        artifacts = run_with_signal(imported, spec, snr, cfg)
    else:
        artifacts = run_experiment(spec, snr, cfg)

    _write_run_outputs(artifacts, resolved, manifest, out_dir)
    manifest.runs.append(RunRecord(
        snr_db=snr,
        mse_before=artifacts.mse_before,
        mse_after=artifacts.mse_after,
        improvement_db=improvement_db(artifacts.mse_before, artifacts.mse_after),
        seed=cfg.seed,
    ))
    _finish(manifest, out_dir, started)

    print("\n" + "=" * 20 + " RUN RESULT " + "=" * 20)
    print(f"waveform:    {'imported' if args.signal_file else spec.kind}")
    print(f"snr:         {snr} dB")
    print(f"mse_before:  {artifacts.mse_before:.6f}")
    print(f"mse_after:   {artifacts.mse_after:.6f}")
    print("=" * 52)
    return 0


def cmd_sweep(args: argparse.Namespace, out_dir: Path) -> int:
    started = time.perf_counter()
    resolved = _resolve(args)
    cfg, spec, exp = resolved.chain, resolved.waveform, resolved.experiment
    snr_list = parse_snr_arg(args.snr) if args.snr else list(exp.snr_list)
    seeds_per_point = args.seeds_per_point or exp.seeds_per_point

    runner = SweepRunner(cfg, n_jobs=args.n_jobs, show_progress=not args.quiet)
    table = runner.run(spec, snr_list, seeds_per_point)
    crossover = find_crossover(table)
    logger.info(
        f"Sweep finished: crossover at {crossover} dB" if crossover is not None
        else "Sweep finished: filter improves every SNR point"
    )

    manifest = _new_manifest("sweep", resolved)
    manifest.seeds = runner.seeds(seeds_per_point)
    for row in table.itertuples(index=False):
        manifest.runs.append(RunRecord(
            snr_db=row.snr_db,
            mse_before=row.mse_before,
            mse_after=row.mse_after,
            improvement_db=row.improvement_db,
        ))
    manifest.add_output(write_table(table, out_dir / f"sweep_{spec.kind}.csv"), out_dir)
    _finish(manifest, out_dir, started)
    print(f"sweep of {len(table)} SNR points written to {out_dir}; crossover: {crossover}")
    return 0


def cmd_demod(args: argparse.Namespace, out_dir: Path) -> int:
    started = time.perf_counter()
    args.waveform = "phase_coded"
    resolved = _resolve(args)
    cfg, spec = resolved.chain, resolved.waveform
    if not isinstance(spec, PhaseCodedSpec):
        raise ValueError(f"demod needs a phase_coded waveform, got {spec.kind}")
    snr = _snr_value(args.snr) if args.snr is not None else resolved.experiment.snr_db

    artifacts = run_experiment(spec, snr, cfg)
    code = phase_code(spec, seed=cfg.seed)
    pre_phase, pre_bits = metrics.recover_bpsk_phase(artifacts.noisy_input, spec.carrier, spec.bit_duration)
    post_phase, post_bits = metrics.recover_bpsk_phase(artifacts.filtered, spec.carrier, spec.bit_duration)
    pre_errors = metrics.count_bit_errors(pre_bits, code)
    post_errors = metrics.count_bit_errors(post_bits, code)

    report = pd.DataFrame({
        "bit": np.arange(spec.n_bits),
        "code": code,
        "pre_phase_rad": pre_phase,
        "pre_bit": pre_bits,
        "post_phase_rad": post_phase,
        "post_bit": post_bits,
    })
    manifest = _new_manifest("demod", resolved)
    manifest.seeds = [cfg.seed]
    manifest.runs.append(RunRecord(
        snr_db=snr,
        mse_before=artifacts.mse_before,
        mse_after=artifacts.mse_after,
        improvement_db=improvement_db(artifacts.mse_before, artifacts.mse_after),
        seed=cfg.seed,
    ))
    manifest.add_output(write_table(report, out_dir / "demod_bits.csv"), out_dir)
    _finish(manifest, out_dir, started)

    print(f"bit errors: before filter {pre_errors}/{spec.n_bits}, after filter {post_errors}/{spec.n_bits}")
    return 0


def cmd_verify(args: argparse.Namespace, out_dir: Path) -> int:
    problems = verify_manifest(args.manifest)
    if problems:
        rel, issue = problems[0]
        print(f"error: {len(problems)} output(s) failed verification, first: {rel} ({issue})", file=sys.stderr)
        return 1
    print(f"verified {args.manifest}")
    return 0


def cmd_schema(args: argparse.Namespace, out_dir: Path) -> int:
    print(json.dumps(config_schema(), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tvmpf",
        description="Time-varying microwave photonic filter simulator.",
    )
    parser.add_argument("--settings", type=str, default="configs/settings.yaml",
                        help="Path to the runtime settings file.")
    parser.add_argument("--out", type=str, default=None,
                        help="Output directory (default: paths.output_dir, env TVMPF_OUTPUT_DIR).")
    parser.add_argument("--log-level", type=str, default=None,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    parser.add_argument("--n-jobs", type=int, default=None, help="Parallel jobs for sweeps and probes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_parser(name: str, help_text: str, waveform: bool = True) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None, help="Experiment YAML/JSON file.")
        p.add_argument("--seed", type=int, default=None, help="Run seed (overrides chain.seed).")
        if waveform:
            p.add_argument("--waveform", choices=sorted(WAVEFORM_KINDS), default=None)
        return p

    p = experiment_parser("gen", "Synthesize a waveform and its control signal.")
    p.set_defaults(handler=cmd_gen)

    p = experiment_parser("response", "Stepped-tone passband measurement.", waveform=False)
    p.add_argument("--ctrl", type=str, default=None, help="Comma-separated control frequencies (Hz).")
    p.set_defaults(handler=cmd_response)

    p = experiment_parser("run", "One filtering experiment.")
    p.add_argument("--snr", type=str, default=None, help="In-band SNR in dB, or 'none'.")
    p.add_argument("--signal-file", type=str, default=None, help="Raw f64 drive signal to filter.")
    p.set_defaults(handler=cmd_run)

    p = experiment_parser("sweep", "MSE versus SNR sweep.")
    p.add_argument("--snr", type=str, default=None, help="start:step:stop in dB (inclusive).")
    p.add_argument("--seeds-per-point", type=int, default=None)
    p.add_argument("--quiet", action="store_true", help="Hide the progress bar.")
    p.set_defaults(handler=cmd_sweep)

    p = experiment_parser("demod", "Binary phase-code recovery report.", waveform=False)
    p.add_argument("--snr", type=str, default=None, help="In-band SNR in dB, or 'none'.")
    p.set_defaults(handler=cmd_demod)

    p = sub.add_parser("verify", help="Recompute the checksums recorded in a manifest.")
    p.add_argument("manifest", type=str)
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("schema", help="Print the experiment configuration JSON schema.")
    p.set_defaults(handler=cmd_schema)
    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """
    命令行入口。

    Returns:
        int: 0 成功；1 运行失败（stderr 输出单行诊断）；2 用法错误。
    """
    parser = build_parser()
    try:
        args = parser.parse_args(_attach_negative_values(sys.argv[1:] if argv is None else argv))
    except SystemExit as e:
        return int(e.code or 0)

    try:
        settings = load_settings(args.settings)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    setup_logger(log_level=args.log_level or settings["logging"]["level"])
    if args.n_jobs is None:
        args.n_jobs = settings["runtime"]["n_jobs"]
    out_dir = Path(args.out or settings["paths"]["output_dir"])

    try:
        if args.command not in ("verify", "schema"):
            out_dir.mkdir(parents=True, exist_ok=True)
        with sp_fft.set_workers(settings["runtime"]["fft_workers"]):
            return args.handler(args, out_dir)
    except (ValueError, OSError) as e:
        message = str(e).splitlines()[0] if str(e) else type(e).__name__
        logger.error(f"{args.command} failed: {message}", exc_info=logger.isEnabledFor(logging.DEBUG))
        print(f"error: {message}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
