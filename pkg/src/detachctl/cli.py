"""Command-line entry point: ``detachctl <command> [--seed S] [--config PATH] [--out DIR]``.

Exit status is 0 on success, 2 for validation/usage problems and 3 for
runtime failures.  Every file written under ``--out`` is a pure function of
the seed and config; wall-clock latency is only written with ``--latency``.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness, linmodel
from .config import Config, load_config, parse_config
from .control import FopdtParams, PidGains, tune_pid_from_fopdt
from .core import read_frame, write_frame
from .dzmetric import DZ_VARIANTS
from .errors import DetachError, FormatError, ValidationError
from .labeling import LabeledSample, read_manifest, write_manifest
from .preprocess import (PREPROCESSING_TAGS, build_histogram, prepare_realtime, prepare_training, read_histogram,
                         write_histogram)
from .trace import correlate, fit_adjust_alpha, read_trace, tracking_metrics, write_trace

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

MODEL_FILE = "model.linmap"
HIST_FILE = "reference_hist.csv"
SYSID_COLUMNS = ("k", "tau_p", "theta", "g_p", "ratio_i", "ratio_d", "filter_tau", "closed_loop_tau")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _config(args) -> Config:
    if args.config is None:
        return parse_config("")
    cfg = load_config(args.config)
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args, cfg: Config) -> int:
    return cfg.scenario.seed if args.seed is None else args.seed


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_gen_data(args) -> None:
    cfg = _config(args)
    out = _out(args)
    seed = _seed(args, cfg)
    count = cfg.data.count if args.count is None else args.count
    if count < 2:
        raise ValidationError("gen-data needs at least 2 samples")
    n_test = min(count - 1, max(1, int(round(count * cfg.data.test_fraction))))
    frames_dir = out / "frames"
    frames_dir.mkdir(exist_ok=True)
    samples = harness.generate_campaign(cfg, seed, count)
    rows = []
    for k, s in enumerate(samples):
        name = f"frames/frame_{k:05d}.frame"
        write_frame(out / name, s.camera)
        rows.append((name, s.label, s.geometry))
    n_train = count - n_test
    write_manifest(out / "train_manifest.csv", rows[:n_train])
    write_manifest(out / "test_manifest.csv", rows[n_train:])
    write_histogram(out / HIST_FILE, build_histogram([s.camera for s in samples[:n_train]]))
    print(f"wrote {n_train} training and {n_test} held-out frames to {out}")


def _load_manifest(path):
    items = read_manifest(path)
    if not items:
        raise ValidationError(f"manifest {path} lists no frames")
    return [(read_frame(p), z, g) for p, z, g in items]


def cmd_train(args) -> None:
    cfg = _config(args)
    out = _out(args)
    prep = args.preprocessing or cfg.train_preprocessing
    lam = args.ridge_lambda if args.ridge_lambda is not None else cfg.train_lambda
    items = _load_manifest(args.manifest)
    reference = None
    if prep in ("hist", "norm"):
        hist_path = Path(args.histogram) if args.histogram else Path(args.manifest).parent / HIST_FILE
        reference = read_histogram(hist_path) if hist_path.exists() else build_histogram([f for f, _, _ in items])
    samples = [LabeledSample(prepare_training(f, prep, reference), z, g) for f, z, g in items]
    model, info = linmodel.train(samples, lam, prep, return_info=True)
    linmodel.save_model(out / MODEL_FILE, model)
    print(f"trained {prep} model on {len(samples)} frames: {info.iterations} iterations, "
          f"converged={info.converged}, lambda={model.ridge_lambda:.6g}")


def cmd_eval(args) -> None:
    out = _out(args)
    model = linmodel.load_model(args.model)
    items = _load_manifest(args.manifest)
    pred = np.array([linmodel.infer(model, prepare_realtime(f, model.preprocessing)) for f, _, _ in items])
    truth = np.array([z for _, z, _ in items])
    resid = pred - truth
    report = {
        "n": int(truth.size),
        "r2": linmodel.r2_score(truth, pred),
        "rmse_m": float(np.sqrt(np.mean(resid ** 2))),
        "mean_residual_m": float(resid.mean()),
        "max_abs_residual_m": float(np.abs(resid).max()),
        "preprocessing": model.preprocessing,
    }
    _dump_json(out / "eval.json", report)
    print(f"R2 = {report['r2']:.6f} on {report['n']} frames")


def cmd_sysid(args) -> None:
    cfg = _config(args)
    out = _out(args)
    scen = cfg.scenario if cfg.scenario.command is not None else harness.default_step()
    if args.seed is not None:
        scen = replace(scen, seed=args.seed)
    model = linmodel.load_model(args.model) if args.model else None
    fp = harness.identify(scen, cfg.plant, model, cfg.dz)
    gains = tune_pid_from_fopdt(fp, cfg.closed_loop_tau, cfg.pid.filter_tau)
    vals = (fp.k, fp.tau_p, fp.theta, gains.g_p, gains.ratio_i, gains.ratio_d, gains.filter_tau,
            cfg.closed_loop_tau)
    (out / "sysid.csv").write_text(",".join(SYSID_COLUMNS) + "\n" + ",".join(format(v, ".9g") for v in vals) + "\n")
    print(f"k={fp.k:.4g} tau_p={fp.tau_p:.4g}s theta={fp.theta:.4g}s -> g_p={gains.g_p:.4g}")


def read_sysid(path) -> tuple[FopdtParams, PidGains]:
    lines = Path(path).read_text().splitlines()
    if len(lines) != 2 or tuple(lines[0].split(",")) != SYSID_COLUMNS:
        raise FormatError(f"{path} is not a sysid report")
    try:
        v = [float(x) for x in lines[1].split(",")]
    except ValueError:
        raise FormatError(f"bad number in {path}") from None
    if len(v) != len(SYSID_COLUMNS):
        raise FormatError(f"{path} row has {len(v)} fields")
    return FopdtParams(v[0], v[1], v[2]), PidGains(v[3], v[4], v[5], v[6])


def cmd_simulate(args) -> None:
    cfg = _config(args)
    out = _out(args)
    scen = cfg.scenario if args.seed is None else replace(cfg.scenario, seed=args.seed)
    model = linmodel.load_model(args.model)
    if args.open_loop:
        gains = None
    elif args.gains:
        gains = read_sysid(args.gains)[1]
    else:
        gains = harness.resolve_gains(cfg)
    latency = harness.LatencyLog() if args.latency else None
    trace = harness.run_closed_loop(scen, model, gains, cfg.dz, cfg.plant, cfg.pid.limits, latency)
    write_trace(out / "trace.csv", trace)
    report = {}
    if scen.target is not None:
        report = tracking_metrics(trace).as_dict()
    if gains is not None:
        report["gains"] = {"g_p": gains.g_p, "ratio_i": gains.ratio_i, "ratio_d": gains.ratio_d,
                           "filter_tau": gains.filter_tau}
    _dump_json(out / "tracking.json", report)
    if latency is not None:
        _dump_json(out / "latency.json", latency.summary())
        s = latency.summary()["render_to_command"]
        print(f"latency: mean {s['mean_ms']:.3f} ms, max {s['max_ms']:.3f} ms per tick", file=sys.stderr)
    if "mad_raw_percent" in report:
        print(f"mad_raw={report['mad_raw_percent']:.3f}% lag_adjusted={report['mad_lag_adjusted_percent']:.3f}% "
              f"lag={report['estimated_lag_s']:.3f}s")


def cmd_correlate(args) -> None:
    out = _out(args)
    trace = read_trace(args.trace)
    r = correlate(trace, (args.lo, args.hi), args.z_cut)
    _dump_json(out / "correlate.json", {"pearson_r": r, "window_on_sqrt_dz": [args.lo, args.hi], "z_cut": args.z_cut})
    print(f"r = {r:.6f}")


def cmd_fit_alpha(args) -> None:
    cfg = _config(args)
    out = _out(args)
    trace = read_trace(args.trace)
    alpha = fit_adjust_alpha(trace, cfg.dz.r_edge)
    _dump_json(out / "alpha.json", {"adjust_alpha": alpha, "r_edge": cfg.dz.r_edge})
    print(f"alpha = {alpha:.6f}")


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--config", default=None,
                        help="scenario/config file, or builtin:<name> for a packaged one")
    common.add_argument("--out", default=".", help="output directory (created if missing)")

    p = _Parser(prog="detachctl", description="Image-based detachment control testbed.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-data", parents=[common], help="render and label a training campaign")
    s.add_argument("--count", type=int, default=None, help="number of frames (default: data.count)")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="fit a linear map from a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--histogram", default=None, help=f"reference histogram (default: {HIST_FILE} beside the manifest)")
    s.add_argument("--preprocessing", choices=PREPROCESSING_TAGS, default=None)
    s.add_argument("--lambda", dest="ridge_lambda", type=float, default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="score a model on a held-out manifest")
    s.add_argument("--model", required=True)
    s.add_argument("--manifest", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sysid", parents=[common], help="fit an FOPDT model to a gas step and tune gains")
    s.add_argument("--model", default=None, help="identify through the camera model instead of the true DZ")
    s.set_defaults(func=cmd_sysid)

    s = sub.add_parser("simulate", parents=[common], help="run the closed loop and score tracking")
    s.add_argument("--model", required=True)
    s.add_argument("--gains", default=None, help="sysid.csv to take gains from")
    s.add_argument("--open-loop", action="store_true", help="follow the config's command waveform")
    s.add_argument("--latency", action="store_true", help="also write latency.json (wall-clock, not deterministic)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("correlate", parents=[common], help="correlate DZ squared with proxy power")
    s.add_argument("--trace", required=True)
    s.add_argument("--lo", type=float, default=0.65)
    s.add_argument("--hi", type=float, default=1.1)
    s.add_argument("--z-cut", type=float, default=2.0)
    s.set_defaults(func=cmd_correlate)

    s = sub.add_parser("fit-alpha", parents=[common], help="fit the radial adjustment factor on a sweep trace")
    s.add_argument("--trace", required=True)
    s.set_defaults(func=cmd_fit_alpha)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "simulate" and args.open_loop and args.gains:
        print("detachctl: --open-loop and --gains are exclusive", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except FileNotFoundError as exc:
        name = exc.filename if exc.filename is not None else exc
        print(f"detachctl: file not found: {name}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"detachctl: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DetachError as exc:
        print(f"detachctl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
