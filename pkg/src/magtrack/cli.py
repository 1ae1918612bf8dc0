"""Command-line driver: sim, track, eval, riccati, e2e.

Exit codes: 0 ok, 1 I/O error, 2 configuration error, 3 malformed event
line, 4 accuracy assertion failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_run_config
from .domain import LayoutError, build_layout, load_layout, save_layout
from .evaluate import EvaluationError, evaluate
from .motion import MotionModelConfig, covariance_trace, write_trace_csv
from .sim import Scenario, ScenarioError, export, read_truth, simulate
from .stream import ReplayError, read_tracks, replay, write_tracks

EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_EVENTS = 3
EXIT_ASSERT = 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise CliError(f"--set expects section.key=value, got {item!r}", EXIT_CONFIG)
        try:
            out[key] = json.loads(raw)
        except ValueError:
            out[key] = raw
    if getattr(args, "window_s", None) is not None:
        out["stream.window_s"] = args.window_s
    return out


def _load_config(args, scenario_path=None) -> RunConfig:
    overrides = _overrides(args)
    try:
        cfg = load_run_config(getattr(args, "config", None), overrides)
        if scenario_path is not None:
            try:
                with open(scenario_path, encoding="utf-8") as fh:
                    doc = json.load(fh)
            except OSError as exc:
                raise CliError(f"cannot read scenario {scenario_path}: {exc}", EXIT_CONFIG) from exc
            except ValueError as exc:
                raise CliError(f"scenario {scenario_path} is not valid JSON: {exc}", EXIT_CONFIG) from exc
            if isinstance(doc, dict) and "seed" not in doc and os.environ.get("MAGTRACK_SEED"):
                doc["seed"] = int(os.environ["MAGTRACK_SEED"])
            sc = Scenario.from_dict(doc)
            cfg = dataclasses.replace(cfg, scenario=sc)
        if getattr(args, "seed", None) is not None:
            cfg = dataclasses.replace(cfg, scenario=dataclasses.replace(cfg.scenario, seed=args.seed))
    except (ConfigError, ScenarioError, ValueError) as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    return cfg


def _write_config(cfg: RunConfig, out: Path) -> None:
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out}: {exc}", EXIT_IO) from exc
    return out


def do_sim(cfg: RunConfig, out: Path):
    sc = cfg.scenario
    try:
        layout = build_layout(sc.layout)
    except LayoutError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    batch, truth = simulate(sc, layout)
    try:
        export(batch, truth, out / "events.jsonl", out / "truth.jsonl", out / "vehicles.jsonl")
        save_layout(layout, out / "layout.json")
        _write_config(cfg, out)
    except OSError as exc:
        raise CliError(f"write failed: {exc}", EXIT_IO) from exc
    print(
        f"seed={sc.seed} vehicles={len(truth.vehicles)} detections={len(batch)} "
        f"true_detections={truth.n_true_detections}"
    )
    return layout


def do_track(cfg: RunConfig, layout_path, events_path, tracks_path, updates_path=None):
    try:
        layout = load_layout(layout_path)
    except OSError as exc:
        raise CliError(f"cannot read layout {layout_path}: {exc}", EXIT_IO) from exc
    except (LayoutError, ValueError) as exc:
        raise CliError(f"bad layout {layout_path}: {exc}", EXIT_CONFIG) from exc
    updates = []
    try:
        store = replay(
            events_path,
            cfg.stream.window_s,
            layout,
            cfg.association,
            cfg.motion,
            cfg.filter,
            cfg.stream.late_tolerance_s,
            on_update=updates.append if updates_path else None,
        )
    except ReplayError as exc:
        raise CliError(str(exc), EXIT_EVENTS) from exc
    except OSError as exc:
        raise CliError(f"cannot read events {events_path}: {exc}", EXIT_IO) from exc
    try:
        write_tracks(store.all_tracks(), tracks_path)
        if updates_path:
            with open(updates_path, "w", encoding="utf-8") as fh:
                for u in updates:
                    fh.write(u.to_json() + "\n")
    except OSError as exc:
        raise CliError(f"write failed: {exc}", EXIT_IO) from exc
    n = len(store.all_tracks())
    print(f"tracks={n} window_s={cfg.stream.window_s}")


def do_eval(tracks_path, truth_path, vehicles_path, report_path, csv_path, skip_points, threshold):
    try:
        pred = read_tracks(tracks_path)
        truth = read_truth(truth_path, vehicles_path)
    except OSError as exc:
        raise CliError(f"cannot read inputs: {exc}", EXIT_IO) from exc
    except (ValueError, KeyError) as exc:
        raise CliError(f"bad input file: {exc}", EXIT_CONFIG) from exc
    try:
        rep = evaluate(pred, truth, skip_points)
    except EvaluationError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    try:
        rep.write_json(report_path)
        if csv_path:
            rep.write_csv(csv_path)
    except OSError as exc:
        raise CliError(f"write failed: {exc}", EXIT_IO) from exc
    print(f"track_accuracy={rep.track_accuracy:.6f} id_swaps={rep.id_swaps} vehicles={rep.n_truth_vehicles} tracks={rep.n_pred_vehicles}")
    if threshold is not None and not rep.track_accuracy >= threshold:
        raise CliError(f"accuracy {rep.track_accuracy:.6f} below {threshold}", EXIT_ASSERT)
    return rep


def cmd_sim(args):
    cfg = _load_config(args, args.scenario)
    do_sim(cfg, _outdir(args.out))


def cmd_track(args):
    cfg = _load_config(args)
    out = Path(args.out)
    tracks_path = out / "tracks.jsonl" if not out.suffix else out
    _outdir(tracks_path.parent)
    (tracks_path.parent / "track_config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
    do_track(cfg, args.layout, args.events, tracks_path, args.updates)


def cmd_eval(args):
    vehicles = args.vehicles
    if vehicles is None:
        guess = Path(args.truth).with_name("vehicles.jsonl")
        vehicles = guess if guess.exists() else None
    do_eval(args.tracks, args.truth, vehicles, args.out, args.csv, args.skip_points, args.assert_accuracy)


def cmd_riccati(args):
    if args.steps < 1:
        raise CliError("--steps must be >= 1", EXIT_CONFIG)
    kind = args.model.upper()
    try:
        base = MotionModelConfig(kind=kind, dt_s=args.dt, a_max=args.a_max)
        if args.q is not None:
            base = dataclasses.replace(base, **({"q_cv": args.q} if kind == "CV" else {"q_a": args.q}))
        if args.r is not None and not args.r > 0:
            raise ValueError("--r must be positive")
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    trace = covariance_trace(base, args.steps, r=args.r)
    if args.out:
        try:
            write_trace_csv(trace, args.out)
        except OSError as exc:
            raise CliError(f"write failed: {exc}", EXIT_IO) from exc
    else:
        write_trace_csv(trace, sys.stdout)


def cmd_e2e(args):
    cfg = _load_config(args, args.scenario)
    out = _outdir(args.out)
    do_sim(cfg, out)
    do_track(cfg, out / "layout.json", out / "events.jsonl", out / "tracks.jsonl")
    do_eval(
        out / "tracks.jsonl", out / "truth.jsonl", out / "vehicles.jsonl", out / "report.json",
        None, args.skip_points, args.assert_accuracy,
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="magtrack", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="run configuration JSON")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")

    sp = sub.add_parser("sim", help="simulate detections and ground truth")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_sim)

    sp = sub.add_parser("track", help="reconstruct trajectories by windowed replay")
    sp.add_argument("--layout", required=True)
    sp.add_argument("--events", required=True)
    sp.add_argument("--out", required=True, help="output directory or .jsonl path")
    sp.add_argument("--window-s", type=float, default=None, help="timer period (default 30)")
    sp.add_argument("--updates", help="write the per-window update stream here")
    common(sp)
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("eval", help="score tracks against ground truth")
    sp.add_argument("--tracks", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--vehicles", help="true trajectories JSONL (for speed error)")
    sp.add_argument("--out", default="report.json")
    sp.add_argument("--csv")
    sp.add_argument("--skip-points", type=int, default=3)
    sp.add_argument("--assert-accuracy", type=float)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("riccati", help="velocity-variance trace of the Kalman recursion")
    sp.add_argument("--model", choices=["cv", "ca", "CV", "CA"], default="cv")
    sp.add_argument("--q", type=float, help="q_cv (CV) or q_a (CA)")
    sp.add_argument("--r", type=float, help="position measurement variance (m^2)")
    sp.add_argument("--dt", type=float, default=1.0)
    sp.add_argument("--a-max", type=float, default=MotionModelConfig().a_max)
    sp.add_argument("--steps", type=int, default=200)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_riccati)

    sp = sub.add_parser("e2e", help="sim + track + eval in one run")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.add_argument("--window-s", type=float, default=None)
    sp.add_argument("--skip-points", type=int, default=3)
    sp.add_argument("--assert-accuracy", type=float)
    common(sp)
    sp.set_defaults(func=cmd_e2e)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except CliError as exc:
        print(f"magtrack {args.command}: {exc}", file=sys.stderr)
        return exc.code
    return 0


if __name__ == "__main__":
    sys.exit(main())
