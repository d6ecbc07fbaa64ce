"""Command-line pipeline: simulate -> train -> track -> eval -> sweeps.

Exit codes: 0 on success, 2 for invalid arguments or missing inputs,
1 for runtime failures (unreadable files, empty datasets, ...).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import TowerDB, TowerEntry, load_tower_csv, save_tower_csv
from .estimators import BayesLocalizer, HmmLocalizer, make_estimator
from .evaluation import (
    evaluate,
    export_cdf,
    summary_table,
    sweep_grid_len,
    sweep_window,
    tune_k,
    write_manifest,
    write_report,
)
from .hmm import build_hmm, load_model, save_model
from .ingest import build_fingerprint, read_scans, serving_only, write_scans
from .geo import GridSpec
from .sim import (
    avg_towers_per_scan,
    default_world,
    gen_trace,
    gen_trajectory,
    load_world,
    save_world,
)


class CliError(Exception):
    def __init__(self, message: str, exit_code: int = 1):
        super().__init__(message)
        self.exit_code = exit_code


def _validation(message: str) -> CliError:
    return CliError(message, exit_code=2)


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise _validation(f"{what} not found: {p}")
    return p


def _load_records(path: str, what: str):
    result = read_scans(_require_file(path, what))
    if result.errors:
        print(f"warning: {len(result.errors)} malformed rows in {path} "
              f"(first at line {result.errors[0][0]}: {result.errors[0][1]})", file=sys.stderr)
    return result.records


def _self_loop(value: str) -> bool:
    return value == "on"


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad numeric list {text!r}") from exc


def _int_list(text: str) -> list[int]:
    return [int(v) for v in _float_list(text)]


def _add_model_params(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cell-len", type=float, default=400.0, help="grid cell length in meters")
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=4,
                   help="grid neighbors per cell")
    p.add_argument("--self-loop", choices=("on", "off"), default="on",
                   help="allow staying in a cell between samples")
    p.add_argument("--alpha", type=float, default=0.5, help="emission smoothing")
    p.add_argument("--bin-width", type=int, default=2, help="RSSI bin width in dB")


def _hmm_params(args) -> dict:
    return {
        "cell_len_m": args.cell_len,
        "connectivity": args.connectivity,
        "self_loop": _self_loop(args.self_loop),
        "alpha": args.alpha,
        "bin_width": args.bin_width,
    }


def cmd_simulate(args) -> int:
    if args.duration < 1:
        raise _validation("--duration must be >= 1 second")
    out = Path(args.out)
    if not out.is_dir():
        raise _validation(f"output directory does not exist: {out}")
    if args.world:
        world = load_world(_require_file(args.world, "world file"))
    else:
        world = default_world(seed=args.seed, n_towers=args.n_towers,
                              cell_len_m=args.cell_len)
        if args.sigma is not None:
            world = replace(world, pathloss=replace(world.pathloss, sigma_db=args.sigma))
    trajectory = gen_trajectory(world, args.duration, model=args.trajectory, seed=args.seed + 1)
    records = gen_trace(world, trajectory, seed=args.seed + 2)

    write_scans(records, out / "scans.csv")
    save_world(world, out / "world.json")
    towers = TowerDB({t.tower_id: TowerEntry(t.pos, "given") for t in world.towers})
    save_tower_csv(towers, out / "towers.csv")
    write_manifest(out / "manifest.json", {
        "command": "simulate",
        "seed": args.seed,
        "duration": args.duration,
        "trajectory": args.trajectory,
        "world": args.world or "(generated)",
        "n_towers": len(world.towers),
    })
    print(f"wrote {out / 'scans.csv'}: {args.duration} scans, "
          f"{len(records)} rows, avg {avg_towers_per_scan(records):.2f} towers/scan")
    return 0


def cmd_train(args) -> int:
    records = serving_only(_load_records(args.train, "training trace"))
    if not records:
        raise CliError(f"no serving records in {args.train}; cannot train")
    spec = GridSpec.from_points([r.pos for r in records], args.cell_len)
    db = build_fingerprint(records, spec, args.bin_width)
    model = build_hmm(db, args.connectivity, _self_loop(args.self_loop), args.alpha)
    save_model(model, args.out)
    print(f"states={model.states.n_states} vocab={len(model.B.vocab)} dropped={db.dropped}")
    return 0


def _build_estimator(args, method: str):
    towers = load_tower_csv(_require_file(args.towers, "tower DB")) if args.towers else None
    if method in ("hmm", "bayes") and args.model:
        model = load_model(_require_file(args.model, "model file"))
        if method == "hmm":
            return HmmLocalizer.from_model(model, window=args.window)
        return BayesLocalizer.from_model(model)
    if not args.train:
        raise _validation(f"method {method!r} needs --model or --train")
    train = _load_records(args.train, "training trace")
    k = args.k
    if method == "knn" and getattr(args, "tune_k", False):
        k = tune_k(train, towers=towers)
        print(f"tuned k={k} on training holdout", file=sys.stderr)
    est = make_estimator(method, towers=towers, k=k, window=args.window, **_hmm_params(args))
    return est.fit(train)


def cmd_track(args) -> int:
    est = _build_estimator(args, args.method)
    test = serving_only(_load_records(args.test, "test trace"))
    if not test:
        raise CliError(f"no serving records in {args.test}")
    pred = est.predict(test)
    warmup = getattr(est, "warmup", 0)
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        f.write("timestamp,lat,lon\n")
        for i in range(warmup, len(test)):
            ts = test[i].timestamp
            ts_text = str(int(ts)) if float(ts).is_integer() else repr(ts)
            if np.isnan(pred[i]).any():
                f.write(f"{ts_text},,\n")  # unlocalizable sample
            else:
                f.write(f"{ts_text},{pred[i, 0]!r},{pred[i, 1]!r}\n")
    print(f"wrote {args.out}: {len(test) - warmup} rows ({warmup} warm-up samples omitted)")
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out)
    if not out.is_dir():
        raise _validation(f"output directory does not exist: {out}")
    methods = ["hmm", "bayes", "knn", "cellid"] if args.method == "all" else [args.method]
    test = _load_records(args.test, "test trace")
    reports = []
    for method in methods:
        est = _build_estimator(args, method)
        report = evaluate(est, test, method=method)
        reports.append(report)
        write_report(report, out / f"report_{method}.json")
        export_cdf(report, out / f"cdf_{method}.csv")
    write_manifest(out / "manifest.json", {
        "command": "eval",
        "methods": methods,
        "train": args.train,
        "test": args.test,
        "model": args.model,
        "towers": args.towers,
        "window": args.window,
        "k": args.k,
        **_hmm_params(args),
    })
    print(summary_table(reports))
    return 0


def cmd_sweep_grid(args) -> int:
    out = Path(args.out)
    if not out.is_dir():
        raise _validation(f"output directory does not exist: {out}")
    train = _load_records(args.train, "training trace")
    test = _load_records(args.test, "test trace")
    proto = HmmLocalizer(window=args.window, **_hmm_params(args))
    reports = sweep_grid_len(train, test, args.lengths, window=args.window, estimator=proto)
    with open(out / "sweep_grid.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write("cell_len_m,median_m,mean_m,p90_m,n_estimates\n")
        for length, r in zip(args.lengths, reports):
            write_report(r, out / f"report_grid_{int(length)}.json")
            export_cdf(r, out / f"cdf_grid_{int(length)}.csv")
            f.write(f"{length!r},{r.median!r},{r.mean!r},{r.p90!r},{r.n_estimates}\n")
    write_manifest(out / "manifest.json", {
        "command": "sweep-grid",
        "train": args.train,
        "test": args.test,
        "lengths": args.lengths,
        "window": args.window,
        **_hmm_params(args),
    })
    for length, r in zip(args.lengths, reports):
        print(f"cell_len={length:g}m median={r.median:.1f}m mean={r.mean:.1f}m")
    return 0


def cmd_sweep_window(args) -> int:
    out = Path(args.out)
    if not out.is_dir():
        raise _validation(f"output directory does not exist: {out}")
    train = _load_records(args.train, "training trace")
    test = _load_records(args.test, "test trace")
    est = HmmLocalizer(window=max(args.windows), **_hmm_params(args)).fit(train)
    reports = sweep_window(est, test, args.windows)
    with open(out / "sweep_window.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write("window,median_m,mean_m,p90_m,n_estimates\n")
        for w, r in zip(args.windows, reports):
            write_report(r, out / f"report_window_{w}.json")
            export_cdf(r, out / f"cdf_window_{w}.csv")
            f.write(f"{w},{r.median!r},{r.mean!r},{r.p90!r},{r.n_estimates}\n")
    write_manifest(out / "manifest.json", {
        "command": "sweep-window",
        "train": args.train,
        "test": args.test,
        "windows": args.windows,
        "window_for_model": max(args.windows),
        **_hmm_params(args),
    })
    for w, r in zip(args.windows, reports):
        print(f"window={w} median={r.median:.1f}m mean={r.mean:.1f}m")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gsmloc",
        description="Serving-cell RSSI localization: HMM tracker, baselines, "
                    "and a synthetic GSM survey generator.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic world and scan trace")
    p.add_argument("--out", required=True, help="existing output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=int, default=2000, help="trace length in seconds")
    p.add_argument("--trajectory", choices=("random-waypoint", "grid-walk"),
                   default="random-waypoint")
    p.add_argument("--world", help="reuse an existing world file instead of generating one")
    p.add_argument("--n-towers", type=int, default=12)
    p.add_argument("--sigma", type=float, default=None, help="shadowing std dev in dB")
    p.add_argument("--cell-len", type=float, default=400.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="build and persist an HMM model from a scan trace")
    p.add_argument("--train", required=True, help="training scan CSV")
    p.add_argument("--out", required=True, help="model file to write")
    _add_model_params(p)
    p.set_defaults(func=cmd_train)

    for name, func in (("track", cmd_track), ("eval", cmd_eval)):
        p = sub.add_parser(
            name,
            help="stream location estimates for a test trace" if name == "track"
            else "score one or all methods against a test trace",
        )
        p.add_argument("--method", default="hmm" if name == "track" else "all",
                       choices=("hmm", "cellid", "knn", "bayes") + (("all",) if name == "eval" else ()))
        p.add_argument("--test", required=True, help="test scan CSV")
        p.add_argument("--train", help="training scan CSV (fit on the fly)")
        p.add_argument("--model", help="persisted HMM model (for hmm/bayes)")
        p.add_argument("--towers", help="tower DB CSV for cellid/knn fallback")
        p.add_argument("--out", required=True,
                       help="estimates CSV" if name == "track" else "existing output directory")
        p.add_argument("--window", type=int, default=10, help="observation window length")
        p.add_argument("--k", type=int, default=4, help="KNN neighbor count")
        p.add_argument("--tune-k", action="store_true",
                       help="pick k on a training holdout instead of using --k")
        _add_model_params(p)
        p.set_defaults(func=func)

    p = sub.add_parser("sweep-grid", help="train/evaluate the tracker per grid cell length")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True, help="existing output directory")
    p.add_argument("--lengths", type=_float_list, default=[100.0, 200.0, 400.0, 800.0, 1600.0])
    p.add_argument("--window", type=int, default=10)
    _add_model_params(p)
    p.set_defaults(func=cmd_sweep_grid)

    p = sub.add_parser("sweep-window", help="evaluate one trained tracker per window length")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True, help="existing output directory")
    p.add_argument("--windows", type=_int_list, default=list(range(1, 11)))
    _add_model_params(p)
    p.set_defaults(func=cmd_sweep_window)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
