"""Command-line client for the patchvote service.

Each subcommand builds a request for the HTTP service. By default the
service app is mounted in-process, so commands work with no server running;
``--server URL`` targets a remote instance started with ``patchvote serve``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import asyncio
import os
import sys
import threading
import time
from typing import Any

import httpx

from .config import load_config

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class ServiceClient:
    """POST/GET against a remote server or the in-process app."""

    def __init__(self, server: str | None):
        self.server = server
        if server is None:
            from .service import create_app

            self._app = create_app()

    def request(self, method: str, path: str, payload: dict | None = None) -> tuple[int, Any]:
        if self.server is not None:
            with httpx.Client(base_url=self.server, timeout=None) as client:
                response = client.request(method, path, json=payload)
                return response.status_code, response.json()

        async def _go():
            transport = httpx.ASGITransport(app=self._app, raise_app_exceptions=False)
            async with httpx.AsyncClient(
                transport=transport, base_url="http://service", timeout=None
            ) as client:
                response = await client.request(method, path, json=payload)
                return response.status_code, response.json()

        return asyncio.run(_go())

    def post(self, path: str, payload: dict) -> tuple[int, Any]:
        return self.request("POST", path, payload)


def _fail(status: int, body: Any) -> int:
    detail = body.get("detail", body) if isinstance(body, dict) else body
    print(f"error: {detail}", file=sys.stderr)
    return EXIT_USAGE if 400 <= status < 500 else EXIT_RUNTIME


def _require_file(path: str) -> None:
    from .errors import ConfigurationError

    if not os.path.exists(path):
        raise ConfigurationError(f"no such file: {path}")


class _MetricsTail(threading.Thread):
    """Mirror new metrics rows to stderr while training runs."""

    def __init__(self, path: str):
        super().__init__(daemon=True)
        self.path = path
        self._halt = threading.Event()

    def run(self) -> None:
        position = 0

        def drain() -> None:
            nonlocal position
            if os.path.exists(self.path):
                with open(self.path, encoding="ascii") as f:
                    f.seek(position)
                    chunk = f.read()
                    position = f.tell()
                if chunk:
                    sys.stderr.write(chunk)
                    sys.stderr.flush()

        while not self._halt.is_set():
            drain()
            self._halt.wait(0.5)
        drain()

    def stop(self) -> None:
        self._halt.set()
        self.join(timeout=2)


def cmd_train(args: argparse.Namespace) -> int:
    _require_file(args.config)
    config = load_config(args.config)  # fail fast with a named key
    out_dir = args.out or config.output.dir
    payload = {
        "config": config.model_dump(),
        "workers": args.workers,
        "resume": args.resume,
        "seed": args.seed,
        "out_dir": args.out,
        "bridge": args.bridge,
    }
    print(f"training -> {out_dir}", file=sys.stderr)
    tail = _MetricsTail(os.path.join(out_dir, "metrics.tsv"))
    tail.start()
    try:
        status, body = ServiceClient(args.server).post("/train", payload)
    finally:
        time.sleep(0.05)
        tail.stop()
    if status != 200:
        return _fail(status, body)
    note = " (early stop)" if body["stopped_early"] else ""
    print(
        f"done: {body['generations_run']} generations, best fitness {body['best_fitness']:.3f}{note}",
        file=sys.stderr,
    )
    print(body["metrics_path"])
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    _require_file(args.checkpoint)
    payload = {
        "checkpoint": args.checkpoint,
        "episodes": args.episodes,
        "seed": args.seed,
        "workers": args.workers,
        "max_steps": args.max_steps,
        "bridge": args.bridge,
    }
    status, body = ServiceClient(args.server).post("/evaluate", payload)
    if status != 200:
        return _fail(status, body)
    line = f"{body['mean']:.2f} ± {body['std']:.2f} over {body['episodes']} episodes"
    print(line)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "evaluation.tsv")
        with open(path, "w", encoding="utf-8") as f:
            f.write("episode\tscore\n")
            for i, score in enumerate(body["scores"]):
                f.write(f"{i}\t{score!r}\n")
            f.write(f"# {line}\n")
    return EXIT_OK


def cmd_viz(args: argparse.Namespace) -> int:
    _require_file(args.checkpoint)
    payload = {
        "checkpoint": args.checkpoint,
        "seed": args.seed,
        "out_dir": args.out,
        "max_steps": args.max_steps,
        "png": args.png,
        "bridge": args.bridge,
    }
    status, body = ServiceClient(args.server).post("/visualize", payload)
    if status != 200:
        return _fail(status, body)
    print(f"{body['steps']} overlays in {body['out_dir']} (episode score {body['score']:.2f})")
    return EXIT_OK


def cmd_gen(args: argparse.Namespace) -> int:
    _require_file(args.checkpoint)
    payload = {
        "checkpoint": args.checkpoint,
        "episodes": args.episodes,
        "seed": args.seed,
        "workers": args.workers,
        "max_steps": args.max_steps,
        "modifications": args.mods.split(",") if args.mods else None,
        "out_path": os.path.join(args.out, "generalization.tsv") if args.out else None,
        "bridge": args.bridge,
    }
    status, body = ServiceClient(args.server).post("/generalize", payload)
    if status != 200:
        return _fail(status, body)
    sys.stdout.write(body["table"])
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    _require_file(args.checkpoint)
    payload = {
        "checkpoint": args.checkpoint,
        "episodes": args.episodes,
        "seed": args.seed,
        "out_dir": args.out,
        "max_steps": args.max_steps,
        "top_quantile": args.top_quantile,
        "bins": args.bins,
        "samples_per_range": args.samples,
        "png": args.png,
        "bridge": args.bridge,
    }
    status, body = ServiceClient(args.server).post("/analyze", payload)
    if status != 200:
        return _fail(status, body)
    print(
        f"analyzed {body['episodes']} episodes ({body['steps']} steps); "
        f"top-quantile floor {body['quantile_floor']:.4f}; report in {body['out_dir']}"
    )
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchvote", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=True):
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="genome checkpoint path")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--server", default=None, help="remote service URL (default: in-process)")
        p.add_argument("--bridge", default=None, help="external env endpoint (tcp:HOST:PORT or cmd:...)")
        p.add_argument("--max-steps", type=int, default=None, help="per-episode step cap")

    p_train = sub.add_parser("train", help="run the evolution loop from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--workers", type=int, default=1)
    p_train.add_argument("--resume", action="store_true")
    p_train.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_train.add_argument("--out", default=None, help="override the config output dir")
    p_train.add_argument("--server", default=None)
    p_train.add_argument("--bridge", default=None)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint over held-out episodes")
    common(p_eval)
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--workers", type=int, default=1)
    p_eval.add_argument("--out", default=None, help="also write per-episode scores here")
    p_eval.set_defaults(fn=cmd_eval)

    p_viz = sub.add_parser("viz", help="write per-step attention overlays for one episode")
    common(p_viz)
    p_viz.add_argument("--out", required=True)
    p_viz.add_argument("--png", action="store_true", help="write PNG instead of PPM")
    p_viz.set_defaults(fn=cmd_viz)

    p_gen = sub.add_parser("gen", help="score a checkpoint under rendering modifications")
    common(p_gen)
    p_gen.add_argument("--episodes", type=int, default=100)
    p_gen.add_argument("--workers", type=int, default=1)
    p_gen.add_argument("--mods", default=None, help="comma-separated kinds (default: all compatible)")
    p_gen.add_argument("--out", default=None)
    p_gen.set_defaults(fn=cmd_gen)

    p_an = sub.add_parser("analyze", help="importance histogram and exemplar patches")
    common(p_an)
    p_an.add_argument("--episodes", type=int, default=20)
    p_an.add_argument("--out", required=True)
    p_an.add_argument("--bins", type=int, default=32)
    p_an.add_argument("--top-quantile", type=float, default=0.05)
    p_an.add_argument("--samples", type=int, default=8)
    p_an.add_argument("--png", action="store_true")
    p_an.set_defaults(fn=cmd_analyze)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8321)
    p_serve.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    from .errors import ConfigurationError

    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit as exc:
        raise exc
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostics
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
