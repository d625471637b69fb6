"""Command line entry points.

`run` drives the twin loop in-process; everything else is a thin layer over
the workspace files or the HTTP API so the heavy lifting stays in one place.

Exit codes: 0 success, 2 unusable configuration or arguments, 3 a check or
remote call failed.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
import tempfile
import threading
import urllib.error
import urllib.request
from pathlib import Path

from .model import (
    Acceleration,
    ConfigError,
    DCTwinError,
    canonical_json,
    write_topology_file,
    write_workload_csv,
)
from .orchestrator import TwinConfig, load_config, run_loop
from .telemetry import (
    InvalidProfile,
    builtin_profile,
    constant_load_workload,
    synthesize_ground_truth,
    write_telemetry_file,
)
from .workspace import Workspace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILED = 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dc-twin", description="self-calibrating datacenter twin"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate, score, and calibrate window by window")
    run.add_argument("--config", required=True, help="path to the run config JSON")
    run.add_argument(
        "--acceleration",
        help="override pacing: realtime, fixed:<factor>, or max",
    )
    run.add_argument(
        "--no-calibration",
        action="store_true",
        help="freeze the initial exponent for the whole run",
    )
    run.add_argument(
        "--horizon",
        type=int,
        help="override the simulated horizon in seconds (multiple of the window)",
    )
    run.add_argument(
        "--serve",
        action="store_true",
        help="also expose the HTTP API over the workspace while running",
    )
    run.add_argument("--quiet", action="store_true", help="suppress per-window lines")

    replay = sub.add_parser(
        "replay-check",
        help="run the config twice at maximum acceleration and compare report bytes",
    )
    replay.add_argument("--config", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic scenario directory")
    synth.add_argument(
        "--profile",
        required=True,
        help="steady, drift-step, underutilized, or constant-load",
    )
    synth.add_argument("--days", type=int, default=7)
    synth.add_argument("--hosts", type=int, default=20)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="directory to write the scenario into")

    serve = sub.add_parser("serve", help="serve the HTTP API over an existing workspace")
    serve.add_argument("--workspace", required=True)
    serve.add_argument("--addr", help="host:port to bind (or DCTWIN_API_ADDR)")
    serve.add_argument(
        "--control",
        action="store_true",
        help="allow POST /api/v1/control to steer a live run",
    )

    status = sub.add_parser("status", help="print a running service's status")
    status.add_argument("--addr", help="host:port of the API (or DCTWIN_API_ADDR)")

    decide = sub.add_parser("decide", help="approve or reject a recommendation")
    decide.add_argument("id", help="recommendation id")
    group = decide.add_mutually_exclusive_group(required=True)
    group.add_argument("--approve", action="store_true")
    group.add_argument("--reject", action="store_true")
    decide.add_argument("--operator", required=True)
    decide.add_argument("--addr", help="host:port of the API (or DCTWIN_API_ADDR)")

    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    overrides: dict = {}
    if args.acceleration:
        overrides["acceleration"] = Acceleration.parse(args.acceleration)
    if args.no_calibration:
        overrides["calibration_enabled"] = False
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    config = load_config(args.config, **overrides)

    api_thread: threading.Thread | None = None
    if args.serve:
        from .api import create_app, resolve_addr

        import uvicorn

        host, port = resolve_addr(config.api_addr)
        ws = Workspace(config.workspace)
        ws.initialize(config.public_dict())
        server = uvicorn.Server(
            uvicorn.Config(
                create_app(ws, control_enabled=config.control_enabled,
                           cors_origins=config.cors_origins),
                host=host,
                port=port,
                log_level="warning",
            )
        )
        api_thread = threading.Thread(target=server.run, name="api", daemon=True)
        api_thread.start()
        print(f"api listening on http://{host}:{port}")

    windows = 0
    for report in run_loop(config):
        windows += 1
        if not args.quiet:
            mape_text = (
                "n/a" if report.mape_percent is None else f"{report.mape_percent:6.2f}%"
            )
            tag = "calibrated" if report.calibrated else "warm-up"
            print(
                f"window {report.window.index:4d} [{report.window.start:>8d}, "
                f"{report.window.end:>8d})  mape {mape_text}  r {report.params_used.r:.2f} "
                f"({tag})  truth {len(report.ground_truth):3d}/{len(report.predictions)} samples"
            )
    print(f"done: {windows} windows in {config.workspace}")
    return EXIT_OK


def _cmd_replay_check(args: argparse.Namespace) -> int:
    base = load_config(args.config)
    from dataclasses import replace

    roots: list[Path] = []
    try:
        for attempt in range(2):
            root = Path(tempfile.mkdtemp(prefix=f"replay-{attempt}-"))
            roots.append(root)
            config = replace(
                base, workspace=root, acceleration=Acceleration.maximum()
            )
            for _ in run_loop(config):
                pass
        left, right = Workspace(roots[0]), Workspace(roots[1])
        indices = left.report_indices()
        if indices != right.report_indices():
            print(
                f"MISMATCH: window sets differ ({len(indices)} vs "
                f"{len(right.report_indices())})"
            )
            return EXIT_FAILED
        for index in indices:
            a, b = left.read_report_bytes(index), right.read_report_bytes(index)
            if a != b:
                print(f"MISMATCH: report {index} differs between runs")
                return EXIT_FAILED
        print(f"OK: {len(indices)} reports byte-identical across two replays")
        return EXIT_OK
    finally:
        for root in roots:
            shutil.rmtree(root, ignore_errors=True)


def _cmd_synth(args: argparse.Namespace) -> int:
    if args.days <= 0:
        raise ConfigError("--days must be positive")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        profile = builtin_profile(args.profile, days=args.days, hosts=args.hosts)
    except InvalidProfile as exc:
        # unknown profile is an argument problem, not a failed check
        raise ConfigError(str(exc)) from exc
    horizon = args.days * 86400
    workload = None
    if profile.arrivals is None:
        workload = constant_load_workload(profile.topology, horizon)
    result = synthesize_ground_truth(profile, horizon, args.seed, workload=workload)

    write_topology_file(profile.topology, out / "topology.json")
    write_workload_csv(result.workload, out / "workload.csv")
    write_telemetry_file(result.truth, out / "telemetry.jsonl")
    config = {
        "topology": "topology.json",
        "workload": "workload.csv",
        "telemetry": "telemetry.jsonl",
        "workspace": "workspace",
        "horizon_s": horizon,
        "acceleration": "max",
        "seed": args.seed,
    }
    (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    print(
        f"wrote {args.profile} scenario to {out}: {len(result.workload)} tasks, "
        f"{len(result.truth)} samples, mean power {result.mean_power:.0f} W, "
        f"mean utilization {result.mean_utilization:.1%}"
    )
    return EXIT_OK


def _cmd_serve(args: argparse.Namespace) -> int:
    from .api import serve

    serve(args.workspace, addr=args.addr, control_enabled=args.control or None)
    return EXIT_OK


def _api_call(addr: str | None, path: str, payload: dict | None = None) -> dict:
    from .api import resolve_addr

    host, port = resolve_addr(addr)
    url = f"http://{host}:{port}{path}"
    data = None if payload is None else canonical_json(payload).encode()
    request = urllib.request.Request(
        url, data=data, headers={"Content-Type": "application/json"}
    )
    with urllib.request.urlopen(request, timeout=10) as response:
        return json.loads(response.read())


def _cmd_status(args: argparse.Namespace) -> int:
    status = _api_call(args.addr, "/api/v1/status")
    params = status.get("current_params") or {}
    compliance = status.get("threshold_compliance")
    latest = status.get("latest_report") or {}
    latest_mape = latest.get("mape_percent")
    lines = [
        f"workspace            {status['workspace']}",
        f"windows              {status['windows_total']} total, "
        f"{status['windows_scored']} scored",
        f"latest window        "
        + ("n/a" if not latest else str(latest["window_index"])),
        f"latest mape          "
        + ("n/a" if latest_mape is None else f"{latest_mape:.2f}%"),
        f"accuracy compliance  "
        + ("n/a" if compliance is None else f"{compliance:.0%}")
        + f" (target {status['accuracy_required_fraction']:.0%} under "
        f"{status['accuracy_threshold_percent']:g}%)",
        f"exponent in use      "
        + (f"{params.get('r'):.2f}" if params else "n/a")
        + (" (calibrated)" if status.get("calibrated") else " (warm-up)"),
        f"acceleration         {status.get('acceleration') or 'n/a'}",
        f"pending recs         {status['pending_recommendations']}",
        f"calibrations         {status['calibrations_applied']}",
    ]
    print("\n".join(lines))
    return EXIT_OK


def _cmd_decide(args: argparse.Namespace) -> int:
    decision = "approve" if args.approve else "reject"
    updated = _api_call(
        args.addr,
        f"/api/v1/recommendations/{args.id}/decision",
        {"decision": decision, "operator": args.operator},
    )
    print(f"{updated['id']}: {updated['status']} by {updated['decided_by']}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "replay-check": _cmd_replay_check,
        "synth": _cmd_synth,
        "serve": _cmd_serve,
        "status": _cmd_status,
        "decide": _cmd_decide,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except urllib.error.HTTPError as exc:
        try:
            detail = json.loads(exc.read()).get("detail", "")
        except Exception:
            detail = ""
        print(f"api error {exc.code}: {detail or exc.reason}", file=sys.stderr)
        return EXIT_FAILED
    except urllib.error.URLError as exc:
        print(f"cannot reach api: {exc.reason}", file=sys.stderr)
        return EXIT_FAILED
    except DCTwinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
