"""Command-line front end.

The CLI is a thin client of the HTTP service: every subcommand posts to
the same endpoints the service exposes.  By default requests run
in-process against the ASGI app, so no server needs to be up; --server
switches to a remote instance.

Configuration precedence, lowest to highest: built-in defaults, then
--config JSON file, then the DIRQ_SEED environment variable, then
explicit flags.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical
failure inside a run.
"""

from __future__ import annotations

import argparse
import asyncio
import dataclasses
import json
import sys

import httpx

from .config import RunConfig, apply_env_overrides, load_run_config
from .errors import ConfigError
from .service import create_app

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

_REQUEST_TIMEOUT = 600.0


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract reserves 2 for
    # numerical failures, so remap to 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def parse_sweep_spec(text: str) -> list[float]:
    """Accept "start:stop:step" ranges or comma-separated lists."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3:
                raise ConfigError(f"range spec needs start:stop:step, got {text!r}")
            start, stop, step = parts
            if step <= 0 or stop < start:
                raise ConfigError(f"bad sweep range {text!r}")
            count = int(round((stop - start) / step)) + 1
            values = [round(start + i * step, 12) for i in range(count)]
            return [v for v in values if v <= stop + 1e-12]
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"could not parse sweep values from {text!r}") from None


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON run-config file")
    parser.add_argument("--output-dir", help="artifact directory")
    parser.add_argument("--r", type=float, help="high-variance split fraction")
    parser.add_argument("--r-seed", type=int, help="residual rotation seed")
    parser.add_argument("--seed", type=int, help="data seed (beats DIRQ_SEED)")
    parser.add_argument("--layers", type=int)
    parser.add_argument("--calib-samples", type=int)
    parser.add_argument("--timesteps", type=int)
    parser.add_argument("--eval-samples", type=int)
    parser.add_argument("--out-features", type=int)


def build_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    cfg = apply_env_overrides(cfg)
    updates = {}
    for flag, field in [("output_dir", "output_dir"), ("r", "r"), ("r_seed", "r_seed"),
                        ("layers", "layers"), ("calib_samples", "calib_samples"),
                        ("timesteps", "timesteps"), ("eval_samples", "eval_samples"),
                        ("out_features", "out_features")]:
        value = getattr(args, flag)
        if value is not None:
            updates[field] = value
    if args.seed is not None:
        updates["synth"] = dataclasses.replace(cfg.synth, seed=args.seed)
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _post(server: str | None, path: str, payload: dict) -> tuple[int, dict]:
    if server:
        resp = httpx.post(server.rstrip("/") + path, json=payload, timeout=_REQUEST_TIMEOUT)
        return resp.status_code, resp.json()

    async def go():
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(transport=transport, base_url="http://dirotq",
                                     timeout=_REQUEST_TIMEOUT) as client:
            resp = await client.post(path, json=payload)
            return resp.status_code, resp.json()

    return asyncio.run(go())


def _exit_code_for(status: int, body: dict) -> int:
    if status == 200:
        return EXIT_OK
    if isinstance(body, dict) and body.get("kind") == "numerical":
        return EXIT_NUMERICAL
    return EXIT_CONFIG


def _finish(status: int, body: dict) -> int:
    code = _exit_code_for(status, body)
    if code == EXIT_OK:
        print(json.dumps(body, indent=2, sort_keys=True))
    else:
        message = body.get("message", body) if isinstance(body, dict) else body
        print(f"error: {message}", file=sys.stderr)
    return code


def _run_endpoint(args, path: str) -> int:
    cfg = build_config(args)
    status, body = _post(args.server, path, {"config": cfg.to_json_dict()})
    if path == "/eval" and status == 200 and getattr(args, "sweep_r", None):
        sweep_status, sweep_body = _post(args.server, "/sweep",
                                         {"config": cfg.to_json_dict(),
                                          "r_values": parse_sweep_spec(args.sweep_r)})
        if sweep_status != 200:
            return _finish(sweep_status, sweep_body)
        body = {"eval": body, "sweep": sweep_body}
    return _finish(status, body)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dirotq",
                     description="rotation-based low-bit quantization workbench")
    parser.add_argument("--server", help="base URL of a running service; default runs in-process")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [("calibrate", "accumulate activations and build per-layer bases"),
                            ("quantize", "rotate, fuse, and quantize weights"),
                            ("eval", "score fused layers and emit QSNR reports")]:
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        if name == "eval":
            p.add_argument("--sweep-r", help="also sweep rank fractions, e.g. 0.05:0.25:0.05")

    p = sub.add_parser("sweep", help="rank-fraction sweep, writes r_sweep.csv")
    _add_config_flags(p)
    p.add_argument("--sweep-r", default="0.05:0.25:0.05",
                   help="values as start:stop:step or comma list")

    p = sub.add_parser("judge", help="pairwise comparison of two score files")
    p.add_argument("a_file")
    p.add_argument("b_file")
    p.add_argument("--metric", default="overall", choices=["sc", "pq", "overall"])
    p.add_argument("--tie-eps", type=float, default=0.01)
    p.add_argument("--order", default="overall_of_means",
                   choices=["overall_of_means", "mean_of_overalls"])

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "calibrate":
            return _run_endpoint(args, "/calibrate")
        if args.command == "quantize":
            return _run_endpoint(args, "/quantize")
        if args.command == "eval":
            return _run_endpoint(args, "/eval")
        if args.command == "sweep":
            cfg = build_config(args)
            status, body = _post(args.server, "/sweep",
                                 {"config": cfg.to_json_dict(),
                                  "r_values": parse_sweep_spec(args.sweep_r)})
            return _finish(status, body)
        if args.command == "judge":
            status, body = _post(args.server, "/judge",
                                 {"a_file": args.a_file, "b_file": args.b_file,
                                  "metric": args.metric, "tie_eps": args.tie_eps,
                                  "order": args.order})
            return _finish(status, body)
        if args.command == "serve":
            import uvicorn

            uvicorn.run(create_app(), host=args.host, port=args.port)
            return EXIT_OK
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except httpx.HTTPError as exc:
        print(f"error: request failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
