"""The `report` command line: one executable fronting the whole artifact.

Subcommands:
    report server    run the reporting service
    report agent     replay a scenario through a device agent
    report scenario  generate deterministic scenario files
    report eval      compute relevance statistics from a ratings CSV
    report export    download a report from a running server

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import urllib.error
import urllib.parse
import urllib.request

from . import relevance
from .agents import Agent, AgentConfig, FileRepository, InMemoryRepository, ServerUnreachable
from .scenario import (
    InvalidProfile, ScenarioParseError, generate_scenario, load_scenario,
    profile_by_name, write_scenario, PROFILES,
)
from .server import STORE_DIR_ENV, ServerState, make_server
from .sync import HttpTransport, MalformedBatch, TransportError

logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="report", description="Remote usage monitoring and reporting toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_server = sub.add_parser("server", help="run the reporting service")
    p_server.add_argument("--port", type=int, default=8000)
    p_server.add_argument("--store", default=None,
                          help=f"store directory (default: ${STORE_DIR_ENV})")
    p_server.add_argument("--ui-dir", default=None,
                          help="serve dashboard assets from this directory under /ui/")

    p_agent = sub.add_parser("agent", help="replay a scenario through an agent")
    p_agent.add_argument("--kind", required=True, choices=["smartphone", "desktop"])
    p_agent.add_argument("--device-id", required=True)
    p_agent.add_argument("--scenario", required=True)
    p_agent.add_argument("--server", required=True, help="server base URL")
    pace = p_agent.add_mutually_exclusive_group()
    pace.add_argument("--instant", action="store_true", default=True,
                      help="replay on the virtual clock with no real sleeps (default)")
    pace.add_argument("--speed", type=float, default=None,
                      help="paced replay at this multiple of real time")
    p_agent.add_argument("--sync-interval", type=int, default=5000, metavar="MS")
    p_agent.add_argument("--batch-max", type=int, default=50)
    p_agent.add_argument("--repo", default=None,
                         help="local repository file (default: in-memory)")
    p_agent.add_argument("--capture-interval", type=int, default=None, metavar="MS",
                         help="take timed screen snapshots every MS of virtual time")

    p_scn = sub.add_parser("scenario", help="scenario tools")
    scn_sub = p_scn.add_subparsers(dest="scenario_command", required=True)
    p_gen = scn_sub.add_parser("gen", help="generate a scenario file")
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--profile", required=True, choices=sorted(PROFILES))
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--duration", type=int, default=None, metavar="MIN")

    p_eval = sub.add_parser("eval", help="relevance statistics from a ratings CSV")
    p_eval.add_argument("--ratings", required=True)
    p_eval.add_argument("--json", action="store_true", dest="as_json")

    p_export = sub.add_parser("export", help="download a report from a server")
    p_export.add_argument("--server", required=True)
    p_export.add_argument("--device", required=True)
    p_export.add_argument("--kind", required=True,
                          choices=["screens", "apps", "software", "keylog",
                                   "calls_sms", "social"])
    p_export.add_argument("--from", dest="window_from", required=True, metavar="ISO")
    p_export.add_argument("--to", dest="window_to", required=True, metavar="ISO")
    p_export.add_argument("--format", choices=["json", "csv"], default="json")
    p_export.add_argument("--out", default=None, help="write to file instead of stdout")
    return parser


def _cmd_server(args) -> int:
    store = args.store or os.environ.get(STORE_DIR_ENV) or None
    state = ServerState(store_dir=store)
    httpd = make_server(state, port=args.port, ui_dir=args.ui_dir)
    host, port = httpd.server_address[:2]
    logger.info("serving on http://%s:%s (store: %s)", host, port, store or "memory only")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
    return 0


def _cmd_agent(args) -> int:
    scenario = load_scenario(args.scenario)
    config = AgentConfig(
        device_id=args.device_id, agent_kind=args.kind,
        sync_interval_ms=args.sync_interval, batch_max=args.batch_max,
        server_endpoint=args.server, capture_interval_ms=args.capture_interval)
    repo = FileRepository(args.device_id, args.repo) if args.repo \
        else InMemoryRepository(args.device_id)
    try:
        agent = Agent(config, repo, HttpTransport(args.server))
        instant = args.speed is None
        summary = agent.run(scenario, instant=instant, speed=args.speed or 1.0)
    finally:
        if isinstance(repo, FileRepository):
            repo.close()
    print(json.dumps(summary.to_wire(), sort_keys=True))
    return 0


def _cmd_scenario_gen(args) -> int:
    profile = profile_by_name(args.profile, seed=args.seed, duration_min=args.duration)
    write_scenario(args.out, generate_scenario(profile))
    return 0


def _cmd_eval(args) -> int:
    ratings = relevance.load_ratings_csv(args.ratings)
    means = relevance.mean_relevance(ratings)
    stats = {
        "sessions": means.sessions,
        "mean_crr": relevance.display(means.mean_crr),
        "mean_prr": relevance.display(means.mean_prr),
        "mean_cir": relevance.display(means.mean_cir),
        "efficiency": relevance.display(means.efficiency),
    }
    if args.as_json:
        print(json.dumps(stats, sort_keys=True))
    else:
        print(f"sessions:   {stats['sessions']}")
        print(f"mean_crr:   {stats['mean_crr']}")
        print(f"mean_prr:   {stats['mean_prr']}")
        print(f"mean_cir:   {stats['mean_cir']}")
        print(f"efficiency: {stats['efficiency']}")
    return 0


def _cmd_export(args) -> int:
    query = urllib.parse.urlencode({"from": args.window_from, "to": args.window_to,
                                    "format": args.format})
    url = (args.server.rstrip("/") + "/v1/reports/"
           + urllib.parse.quote(args.device, safe="") + "/" + args.kind + "?" + query)
    try:
        with urllib.request.urlopen(url, timeout=30) as resp:
            body = resp.read()
    except urllib.error.HTTPError as exc:
        print(f"error: server returned HTTP {exc.code}: "
              f"{exc.read().decode('utf-8', 'replace')}", file=sys.stderr)
        return 1
    except (urllib.error.URLError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(body)
    else:
        sys.stdout.buffer.write(body)
        sys.stdout.buffer.flush()
    return 0


def dispatch(argv: list[str]) -> int:
    """Run one CLI invocation; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        if args.command == "server":
            return _cmd_server(args)
        if args.command == "agent":
            return _cmd_agent(args)
        if args.command == "scenario":
            return _cmd_scenario_gen(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "export":
            return _cmd_export(args)
    except (ScenarioParseError, InvalidProfile, relevance.RatingError,
            MalformedBatch, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ServerUnreachable, TransportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    sys.exit(dispatch(sys.argv[1:]))
