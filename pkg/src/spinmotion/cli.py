"""Command-line front end.

Subcommands ``spectrum``, ``scan``, ``fit``, ``compare`` and ``tuneout`` write
CSV and JSON files into ``--out``. Exit codes: 0 success, 2 validation error,
3 fit non-convergence, 4 I/O error.
"""

import argparse
import os
import sys

import numpy as np

from ._validation import ValidationError
from .analysis.calibration import CalibrationError, DickeCalibrator
from .analysis.compare import LINE_LABELS, compare_models
from .analysis.peaks import find_peaks
from .analysis.scan import add_noise, scan_delta
from .analysis.tuneout import LinearTuningFit, synthetic_tuneout
from .io import (
    PEAKS_HEADER,
    SCAN_HEADER,
    SPECTRUM_HEADER,
    TUNEOUT_HEADER,
    RunConfig,
    make_envelope,
    read_csv,
    scan_from_columns,
    write_csv,
    write_envelope,
)
from .model import CESIUM, KHZ
from .spectra import ThermalState, emission_operator, frequency_grid, synthesize

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_FIT = 3
EXIT_IO = 4


def _u64(text):
    try:
        value = int(text, 0)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _add_global_flags(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=default(None), help="flat key = value config file")
    parser.add_argument("--out", default=default(None), help="output directory (overrides output.dir)")
    parser.add_argument("--seed", type=_u64, default=default(None), help="noise seed (overrides noise.seed)")
    parser.add_argument("--threads", type=_positive_int, default=default(None), help="worker threads for scans")
    parser.add_argument("--no-carrier", action="store_true", default=default(False), help="omit the elastic carrier")


def build_parser():
    parser = argparse.ArgumentParser(prog="spinmotion", description=__doc__.split("\n")[0])
    _add_global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="fluorescence spectrum at one Zeeman splitting")
    _add_global_flags(p, suppress=True)
    p = sub.add_parser("scan", help="spectra over a Zeeman-splitting scan, with fitted peaks")
    _add_global_flags(p, suppress=True)
    p = sub.add_parser("fit", help="calibrate trap frequencies, Zeeman splitting and couplings from a scan file")
    p.add_argument("scan_file", help="long-format scan CSV (delta_khz,freq_khz,psd)")
    _add_global_flags(p, suppress=True)
    p = sub.add_parser("compare", help="four-level model against the full model")
    _add_global_flags(p, suppress=True)
    p = sub.add_parser("tuneout", help="linear fit of the Rabi splitting against tune-out power")
    p.add_argument("points_file", nargs="?", help="CSV (power_uw,omega_khz,omega_err_khz); synthetic data if omitted")
    _add_global_flags(p, suppress=True)
    return parser


def _effective_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig.default()
    updates = {}
    if args.out is not None:
        updates["output__dir"] = args.out
    if args.seed is not None:
        updates["noise__seed"] = args.seed
    if args.threads is not None:
        updates["runtime__threads"] = args.threads
    if args.no_carrier:
        updates["spectrum__include_carrier"] = False
    return cfg.replace(**updates) if updates else cfg


def _model_pieces(cfg):
    params = cfg.model_params()
    thermal = ThermalState.for_params(
        params,
        mean_n_x=cfg["thermal.mean_n_x"],
        mean_n_y=cfg["thermal.mean_n_y"],
        mean_n_z=cfg["thermal.mean_n_z"],
    )
    eta_z = cfg["emission.eta_z"] or None
    emission = emission_operator(cfg["emission.eta_x"], cfg["emission.eta_y"], eta_z, F=params.F, n_max=params.n_max)
    grid = frequency_grid(cfg["spectrum.f_min_khz"], cfg["spectrum.f_max_khz"], cfg["spectrum.step_khz"])
    return params, thermal, emission, grid


def _peak_rows(peaks):
    return [
        {"center_khz": p.center_khz, "center_err_khz": p.center_err_khz, "height": p.height, "width_khz": p.width_khz}
        for p in peaks
    ]


def _out(cfg, name):
    return os.path.join(cfg["output.dir"], name)


def cmd_spectrum(cfg):
    params, thermal, emission, grid = _model_pieces(cfg)
    delta = cfg.delta()
    sp = synthesize(params.with_delta(delta), thermal, emission, grid, cfg["spectrum.linewidth_khz"],
                    cfg["spectrum.include_carrier"])
    psd = sp.psd
    if cfg["noise.sigma"] > 0:
        rng = np.random.default_rng(np.uint64(cfg["noise.seed"]))
        psd = psd + cfg["noise.sigma"] * np.max(psd) * rng.standard_normal(psd.shape)
    write_csv(_out(cfg, "spectrum.csv"), SPECTRUM_HEADER, [grid, psd])
    peaks = find_peaks(grid, cfg["peaks.min_height_fraction"], cfg["peaks.min_separation_khz"], psd=psd,
                       linewidth_khz=cfg["spectrum.linewidth_khz"])
    payload = {"delta_khz": delta / KHZ, "n_points": int(grid.size), "noise_sigma": cfg["noise.sigma"],
               "peaks": _peak_rows(peaks)}
    write_envelope(_out(cfg, "spectrum.json"), make_envelope(cfg, cfg["noise.seed"], payload))
    return EXIT_OK


def _build_scan(cfg):
    params, thermal, emission, grid = _model_pieces(cfg)
    deltas_khz = cfg.scan_deltas_khz()
    scan = scan_delta(
        params,
        deltas_khz * KHZ,
        thermal,
        emission,
        grid,
        cfg["spectrum.linewidth_khz"],
        cfg["spectrum.include_carrier"],
        zeeman_offset=cfg["zeeman.offset_khz"] * KHZ,
        n_jobs=cfg["runtime.threads"],
    )
    if cfg["noise.sigma"] > 0:
        scan = add_noise(scan, cfg["noise.sigma"], cfg["noise.seed"])
    return scan


def cmd_scan(cfg):
    scan = _build_scan(cfg)
    n_d, n_f = scan.psd.shape
    write_csv(
        _out(cfg, "scan.csv"),
        SCAN_HEADER,
        [np.repeat(scan.deltas_khz, n_f), np.tile(scan.freq_khz, n_d), scan.psd.ravel()],
    )
    cols = [[] for _ in PEAKS_HEADER]
    for k in range(n_d):
        for p in find_peaks(scan.spectrum(k), cfg["peaks.min_height_fraction"], cfg["peaks.min_separation_khz"]):
            for col, v in zip(cols, (scan.deltas_khz[k], p.center_khz, p.center_err_khz, p.height, p.width_khz)):
                col.append(v)
    write_csv(_out(cfg, "peaks.csv"), PEAKS_HEADER, cols)
    payload = {"n_deltas": n_d, "n_points": n_f, "delta_min_khz": float(scan.deltas_khz[0]),
               "delta_max_khz": float(scan.deltas_khz[-1]), "noise_sigma": cfg["noise.sigma"],
               "n_peaks": len(cols[0])}
    write_envelope(_out(cfg, "scan.json"), make_envelope(cfg, cfg["noise.seed"], payload))
    return EXIT_OK


def cmd_fit(cfg, scan_file):
    delta_khz, freq_khz, psd = read_csv(scan_file, SCAN_HEADER)
    b0 = (lambda d: d / CESIUM.zeeman_rate) if cfg["fit.zeeman"] else None
    scan = scan_from_columns(delta_khz, freq_khz, psd, cfg["spectrum.linewidth_khz"],
                             cfg["spectrum.include_carrier"], b0=b0)
    calibrator = DickeCalibrator(
        trap_window_khz=(cfg["fit.trap_window_min_khz"], cfg["fit.trap_window_max_khz"]),
        zeeman_window_khz=(cfg["fit.zeeman_window_min_khz"], None),
        zeeman=cfg["fit.zeeman"],
        crossing_margin_khz=cfg["fit.crossing_margin_khz"],
        refine=cfg["fit.refine"],
        F=cfg["model.F"],
        n_max=cfg["model.n_max"],
        mean_n_x=cfg["thermal.mean_n_x"],
        mean_n_y=cfg["thermal.mean_n_y"],
        mean_n_z=cfg["thermal.mean_n_z"],
        eta_x=cfg["emission.eta_x"],
        eta_y=cfg["emission.eta_y"],
        eta_z=cfg["emission.eta_z"] or None,
        n_jobs=cfg["runtime.threads"],
    ).fit(scan)
    payload = {"scan_file": os.path.basename(scan_file), "n_deltas": len(scan),
               "calibration": calibrator.calibration_.to_dict()}
    write_envelope(_out(cfg, "calibration.json"), make_envelope(cfg, cfg["noise.seed"], payload))
    return EXIT_OK


def cmd_compare(cfg):
    params, thermal, emission, grid = _model_pieces(cfg)
    res = compare_models(params, cfg.scan_deltas_khz() * KHZ, thermal, emission, grid,
                         cfg["spectrum.linewidth_khz"], cfg["compare.gate_khz"],
                         min_height_fraction=min(cfg["peaks.min_height_fraction"], 0.01),
                         min_separation_khz=cfg["peaks.min_separation_khz"])
    tags = ["g1", "g2", "g3", "12"]
    header = ["delta_khz"]
    cols = [res.deltas_khz]
    for j, tag in enumerate(tags):
        header += [f"simplified_{tag}_khz", f"full_{tag}_khz", f"deviation_{tag}_khz"]
        cols += [res.simplified_khz[:, j], res.full_khz[:, j], res.deviation_khz[:, j]]
    write_csv(_out(cfg, "compare.csv"), header, cols)
    payload = {
        "lines": list(LINE_LABELS),
        "max_deviation_khz": res.max_deviation_khz,
        "max_deviation_per_line_khz": res.max_deviation_per_line(),
        "threshold_khz": cfg["compare.threshold_khz"],
        "within_threshold": bool(res.max_deviation_khz <= cfg["compare.threshold_khz"]),
        "gate_khz": res.gate_khz,
        "association_failures": [{"delta_khz": d, "line": lab} for d, lab in res.failures],
    }
    write_envelope(_out(cfg, "compare.json"), make_envelope(cfg, cfg["noise.seed"], payload))
    return EXIT_OK


def cmd_tuneout(cfg, points_file=None):
    if points_file is None:
        start, stop, step = cfg["tuneout.power_start_uw"], cfg["tuneout.power_stop_uw"], cfg["tuneout.power_step_uw"]
        if stop < start:
            raise ValidationError("tuneout.power_stop_uw must be >= tuneout.power_start_uw")
        powers = start + step * np.arange(int(np.floor((stop - start) / step + 1e-9)) + 1)
        P, Om, sig = synthetic_tuneout(powers, cfg["tuneout.slope_khz_per_uw"], cfg["tuneout.intercept_khz"],
                                       cfg["tuneout.noise_khz"], cfg["noise.seed"])
        write_csv(_out(cfg, "tuneout_points.csv"), TUNEOUT_HEADER,
                  [P, Om, np.zeros_like(P) if sig is None else sig])
        source = "synthetic"
    else:
        P, Om, sig = read_csv(points_file, TUNEOUT_HEADER)
        if sig.size and np.all(sig == 0):
            sig = None
        source = os.path.basename(points_file)
    max_p = cfg["tuneout.max_power_uw"] if cfg["tuneout.exclude_high_power"] else None
    fit = LinearTuningFit(max_power_uw=max_p).fit(P, Om, sigma=sig)
    payload = {
        "source": source,
        "n_points": int(P.size),
        "n_used": fit.n_used_,
        "max_power_uw": max_p,
        "slope_khz_per_uw": fit.slope_,
        "slope_err_khz_per_uw": fit.slope_err_,
        "slope_hz_per_uw": fit.slope_ * 1e3,
        "slope_err_hz_per_uw": fit.slope_err_ * 1e3,
        "intercept_khz": fit.intercept_,
        "intercept_err_khz": fit.intercept_err_,
        "chi2": fit.line_.chi2,
        "dof": fit.line_.dof,
    }
    write_envelope(_out(cfg, "tuneout.json"), make_envelope(cfg, cfg["noise.seed"], payload))
    return EXIT_OK


def run(args):
    cfg = _effective_config(args)
    os.makedirs(cfg["output.dir"], exist_ok=True)
    if args.command == "spectrum":
        return cmd_spectrum(cfg)
    if args.command == "scan":
        return cmd_scan(cfg)
    if args.command == "fit":
        return cmd_fit(cfg, args.scan_file)
    if args.command == "compare":
        return cmd_compare(cfg)
    return cmd_tuneout(cfg, args.points_file)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CalibrationError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
