"""
fog - launch, inspect, connect to and delete robot/cloud deployments.

    fog launch --spec demo.yaml [--dry-run] [--detach]
    fog list [--wireguard DEPLOYMENT [--out DIR]]
    fog delete DEPLOYMENT | --all
    fog connect DEPLOYMENT [MACHINE]
    fog image create|list|delete
    fog bench video|offload|startup|region [--report PATH] [--seed N] [--scale F]

Exit codes: 0 success, 1 runtime failure, 2 usage or launch document error.
"""
import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from bench import SUITES, emit_report, run_suite, write_report
from config import OUTPUT_FORMATS, CliConfig, load_config
from constants import AUTO, DEFAULT_IMAGE, HEARTBEAT_INTERVAL_S
from errors import FogError, UnknownSuite, UsageError
from launch.resolve import resolve_region
from launch.spec import parse_launch_spec
from logger import configure_logging, log_event, set_journal
from orchestrator.execute import Orchestrator
from orchestrator.record import DEGRADED, DELETED, RUNNING
from overlay.wgconfig import export_wireguard_config
from provision.catalog import load_catalog

__all__ = ["main", "cli", "build_parser"]

log = logging.getLogger("fog")

PROMPT = "fog:{machine}> "


# --- output ---------------------------------------------------------------

def _emit_json(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True, default=str))


def _emit_table(headers: Sequence[str], rows: Sequence[Sequence]) -> None:
    cells = [[str(h) for h in headers]] + [["-" if v is None else str(v) for v in r] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    for row in cells:
        print("  ".join(value.ljust(width) for value, width in zip(row, widths)).rstrip())


def _uptime(record, entry) -> Optional[str]:
    if record.status == DELETED or entry.state != "ready":
        return None
    return f"{max(0.0, time.time() - record.created_at):.0f}s"


# --- commands ---------------------------------------------------------------

def _orchestrator(config: CliConfig, args) -> Orchestrator:
    catalog_path = Path(args.catalog) if getattr(args, "catalog", None) else config.catalog_path
    return Orchestrator(config.ensure_state_dir(), catalog=load_catalog(catalog_path),
                        scale=config.scale, agent_mode=config.agent_mode,
                        profile=getattr(args, "profile", None))


def cmd_launch(config: CliConfig, args) -> int:
    try:
        text = Path(args.spec).read_text()
    except OSError as e:
        raise UsageError(f"cannot read {args.spec}: {e}") from e
    spec = parse_launch_spec(text)
    orch = _orchestrator(config, args)
    plan = orch.prepare(spec)

    if args.dry_run:
        if config.output == "json":
            _emit_json(plan.to_dict())
        else:
            print(f"plan for {spec.name}:")
            for line in plan.describe():
                print(line)
        orch.shutdown()
        return 0

    workspace = Path(args.workspace) if args.workspace else Path(args.spec).resolve().parent
    record = orch.execute(plan, no_partial=args.no_partial, workspace=workspace)
    if config.output == "json":
        _emit_json(record.summary())
    else:
        print(record.deployment_id)
    if record.status != RUNNING:
        print(f"fog: launch failed at {record.failed_step}: {record.error}", file=sys.stderr)
        orch.close()
        return 1
    if record.monitor_url:
        print(f"monitor: {record.monitor_url}", file=sys.stderr)
    if args.detach:
        orch.close()
        return 0

    print("running; Ctrl-C stops the robot nodes (machines stay up until `fog delete`)",
          file=sys.stderr)
    status = RUNNING
    try:
        while True:
            time.sleep(HEARTBEAT_INTERVAL_S * 2)
            health = orch.health_snapshot(record.deployment_id)
            if health["status"] != status:
                status = health["status"]
                print(f"{record.deployment_id}: {status}", file=sys.stderr)
                if status == DELETED:
                    break
    except KeyboardInterrupt:
        print("", file=sys.stderr)
    finally:
        orch.close()
    return 0 if status != DEGRADED else 1


def cmd_list(config: CliConfig, args) -> int:
    orch = _orchestrator(config, args)
    try:
        if args.wireguard:
            record = orch.store.load(args.wireguard)
            documents = export_wireguard_config(record)
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                for name, text in documents.items():
                    (out / f"{name}.conf").write_text(text)
                    print(out / f"{name}.conf")
            elif config.output == "json":
                _emit_json(documents)
            else:
                for name, text in documents.items():
                    print(f"# --- {name}.conf ---")
                    print(text)
            return 0

        records = orch.list_deployments()
        if config.output == "json":
            _emit_json({"deployments": [r.to_dict() for r in records]})
            return 0
        rows = []
        for r in records:
            for m in r.machines:
                rows.append((r.deployment_id, r.name, r.status, m.name, m.backend, m.region,
                             m.instance_type, m.state or "-", _uptime(r, m)))
        _emit_table(("DEPLOYMENT", "NAME", "STATUS", "MACHINE", "BACKEND", "REGION", "TYPE",
                     "STATE", "UPTIME"), rows)
        return 0
    finally:
        orch.close()


def cmd_delete(config: CliConfig, args) -> int:
    if bool(args.deployment) == bool(args.all):
        raise UsageError("give a deployment id or --all")
    orch = _orchestrator(config, args)
    try:
        if args.all:
            targets = [r.deployment_id for r in orch.list_deployments() if r.status != DELETED]
        else:
            targets = [args.deployment]
        for deployment_id in targets:
            record = orch.teardown(deployment_id)
            print(f"{record.deployment_id}: {record.status}")
        return 0
    finally:
        orch.shutdown()


def cmd_connect(config: CliConfig, args) -> int:
    orch = _orchestrator(config, args)
    try:
        record = orch.store.load(args.deployment)
        machine = args.machine or (record.machines[0].name if record.machines else "")
        if not machine:
            raise UsageError(f"{args.deployment} has no cloud machines")
        session = orch.attach(args.deployment, machine)
        log_event("connect", deployment_id=args.deployment, machine=machine)
        with session:
            while True:
                try:
                    line = input(PROMPT.format(machine=machine))
                except EOFError:
                    print("", file=sys.stderr)
                    break
                line = line.strip()
                if not line:
                    continue
                if line in ("exit", "quit"):
                    break
                try:
                    reply = session.execute(line)
                except FogError as e:
                    print(f"fog: {e}", file=sys.stderr)
                    continue
                if "result" in reply:
                    _emit_json(reply["result"])
                else:
                    sys.stdout.write(reply.get("stdout", ""))
                    sys.stderr.write(reply.get("stderr", ""))
                    if reply.get("returncode"):
                        print(f"[exit {reply['returncode']}]", file=sys.stderr)
        return 0
    finally:
        orch.close()


def cmd_image(config: CliConfig, args) -> int:
    orch = _orchestrator(config, args)
    try:
        if args.image_command == "create":
            backend = orch.backend(args.backend or config.default_backend)
            region = args.region
            if region == AUTO:
                region = resolve_region(backend.probe_all())
            record = backend.build_image(region, base=args.base, tags=args.tag or ())
            if config.output == "json":
                _emit_json(record.to_dict())
            else:
                print(record.image_id)
            return 0

        if args.image_command == "list":
            records = orch.images.list(args.backend, args.region if args.region != AUTO else None)
            if config.output == "json":
                _emit_json({"images": [r.to_dict() for r in records]})
            else:
                _emit_table(("IMAGE", "BACKEND", "REGION", "PREINSTALLED", "BASE", "TAGS"),
                            [(r.image_id, r.backend, r.region, str(r.preinstalled).lower(), r.base,
                              ",".join(sorted(r.capability_tags)) or None) for r in records])
            return 0

        in_use = {m.image for r in orch.list_deployments() if r.status != DELETED
                  for m in r.machines}
        record = orch.images.remove(args.image, in_use=in_use)
        print(f"deleted {record.image_id}")
        return 0
    finally:
        orch.shutdown()


def cmd_bench(config: CliConfig, args) -> int:
    if args.suite not in SUITES:
        raise UnknownSuite(f"unknown bench suite {args.suite!r} (known: {', '.join(SUITES)})")
    options = {"state_dir": config.ensure_state_dir() / "bench"}
    for name in ("frames", "repetitions", "runs"):
        if getattr(args, name) is not None:
            options[name] = getattr(args, name)
    report = run_suite(args.suite, seed=args.seed, scale=config.scale, **options)
    if args.report:
        fmt = write_report(report, args.report, args.format)
        log.info("wrote %s report to %s", fmt, args.report)
    print(emit_report(report, "json" if config.output == "json" else "markdown"), end="")
    return 0


COMMANDS = {
    "launch": cmd_launch,
    "list": cmd_list,
    "delete": cmd_delete,
    "connect": cmd_connect,
    "image": cmd_image,
    "bench": cmd_bench,
}


# --- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fog", description="robot/cloud deployment tool")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="errors only")
    parser.add_argument("--state-dir", help="state directory (default $FOGMESH_STATE_DIR "
                                            "or ~/.fogmesh)")
    parser.add_argument("--output", choices=OUTPUT_FORMATS, help="table or json")
    parser.add_argument("--scale", type=float, help="mock startup delay scale factor")
    parser.add_argument("--agent-mode", choices=("process", "thread"))
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("launch", help="launch a deployment from a launch document")
    p.add_argument("--spec", required=True, help="launch document (YAML)")
    p.add_argument("--dry-run", action="store_true", help="print the plan, provision nothing")
    p.add_argument("--detach", action="store_true", help="return once the deployment is running")
    p.add_argument("--no-partial", action="store_true",
                   help="destroy provisioned machines if a step fails")
    p.add_argument("--workspace", help="directory custom executables are relative to")
    p.add_argument("--catalog", help="provider catalog (YAML)")
    p.add_argument("--profile", help="robot location profile for region probing")

    p = sub.add_parser("list", help="list deployments and their machines")
    p.add_argument("--wireguard", metavar="DEPLOYMENT", help="export WireGuard-style configs")
    p.add_argument("--out", help="directory for --wireguard .conf files")

    p = sub.add_parser("delete", help="tear down a deployment")
    p.add_argument("deployment", nargs="?")
    p.add_argument("--all", action="store_true", help="every deployment that is not deleted")

    p = sub.add_parser("connect", help="interactive session with a machine's agent")
    p.add_argument("deployment")
    p.add_argument("machine", nargs="?", help="default: the first cloud machine")

    p = sub.add_parser("image", help="manage pre-installed images")
    images = p.add_subparsers(dest="image_command", metavar="action", required=True)
    q = images.add_parser("create", help="bake a pre-installed image")
    q.add_argument("--backend")
    q.add_argument("--region", default=AUTO)
    q.add_argument("--base", default=DEFAULT_IMAGE)
    q.add_argument("--tag", action="append", help="capability tag (repeatable)")
    q.add_argument("--profile")
    q = images.add_parser("list", help="list images")
    q.add_argument("--backend")
    q.add_argument("--region", default=AUTO)
    q = images.add_parser("delete", help="delete an image no deployment uses")
    q.add_argument("image")

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("suite", help=f"one of: {', '.join(SUITES)}")
    p.add_argument("--report", help="write the report here (.md, .csv or .json)")
    p.add_argument("--format", choices=("markdown", "csv", "json"),
                   help="report format (default: from the --report suffix)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, help="video: frames to capture")
    p.add_argument("--repetitions", type=int, help="startup: launches per cell")
    p.add_argument("--runs", type=int, help="region: seeded probe runs per profile")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(-1 if args.quiet else args.verbose)
    try:
        config = load_config(args.state_dir, scale=args.scale, output=args.output,
                             agent_mode=args.agent_mode)
        set_journal(config.journal_path)
        log_event("command", command=args.command, argv=list(argv or sys.argv[1:]))
        return COMMANDS[args.command](config, args)
    except FogError as e:
        print(f"fog: error: {e}", file=sys.stderr)
        log_event("command_failed", command=args.command, error=str(e), exit_code=e.exit_code)
        return e.exit_code
    except KeyboardInterrupt:
        return 1


def cli() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli()
