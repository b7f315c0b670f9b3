"""Adapter entry point: serve one environment over stdio or a TCP socket."""

from __future__ import annotations

import argparse
import socket
import sys

from .envs import CarRacingEnv, DoomTakeCoverEnv, ScriptedEnv
from .mods import FRAME_LEVEL, SCENARIO_LEVEL, FrameModifier, validate_pairing
from .protocol import serve


def build_env(args: argparse.Namespace):
    validate_pairing(args.env, args.modification)
    modifier = None
    if args.modification in FRAME_LEVEL:
        modifier = FrameModifier(args.modification)
    if args.env == "scripted":
        return ScriptedEnv()
    if args.env == "carracing":
        return CarRacingEnv(modifier=modifier, size=args.size)
    if args.env == "doomtakecover":
        if args.modification in SCENARIO_LEVEL and not args.scenario:
            raise ValueError(
                f"{args.modification} needs a modified scenario file; pass --scenario"
            )
        return DoomTakeCoverEnv(modifier=modifier, scenario=args.scenario, size=args.size)
    raise ValueError(f"unknown env {args.env!r}")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="gym-adapter", description=__doc__)
    parser.add_argument("--env", required=True,
                        choices=["carracing", "doomtakecover", "scripted"])
    parser.add_argument("--modification", default=None,
                        help="rendering modification kind (environment specific)")
    parser.add_argument("--scenario", default=None,
                        help="modified scenario file for the scenario-level kinds")
    parser.add_argument("--size", type=int, default=96,
                        help="observation side length sent over the wire")
    parser.add_argument("--transport", default="stdio", help="'stdio' or 'tcp:PORT'")
    args = parser.parse_args(argv)

    try:
        env = build_env(args)
    except (ValueError, ImportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.transport == "stdio":
        serve(env, sys.stdin.buffer, sys.stdout.buffer)
        return 0
    if args.transport.startswith("tcp:"):
        port = int(args.transport.split(":", 1)[1])
        with socket.create_server(("127.0.0.1", port)) as server:
            conn, _ = server.accept()
            with conn, conn.makefile("rb") as rf, conn.makefile("wb") as wf:
                serve(env, rf, wf)
        return 0
    print(f"error: unknown transport {args.transport!r}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
