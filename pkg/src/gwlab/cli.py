"""Command-line client for the laboratory service.

Every subcommand builds a request, sends it to the service (in-process by
default, or a remote instance via --server), and writes a CSV plus a run
manifest next to it.  Numeric output uses 17 significant digits.  Exit
codes: 0 ok, 2 validation error, 3 truncation error, 4 degenerate
condition; machine-readable error JSON goes to stderr.
"""

from __future__ import annotations

import argparse
import asyncio
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import httpx

from . import __version__

EXIT_BY_KIND = {"validation": 2, "truncation": 3, "degenerate": 4}
FMT = "{:.17g}"


@dataclass(frozen=True)
class RunManifest:
    """Reproducibility record written alongside every output file."""

    command: str
    argv: list[str]
    model_sha256: str
    tolerances: dict
    seed: int | None
    threads: int | None
    artifact_version: str
    outputs: list[str]
    created_utc: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat()
    )


def _fmt(value) -> str:
    if isinstance(value, float):
        return FMT.format(value)
    return str(value)


def _request(server: str | None, path: str, payload: dict) -> tuple[int, dict]:
    if server:
        with httpx.Client(base_url=server, timeout=600.0) as client:
            resp = client.post(path, json=payload)
            return resp.status_code, resp.json()

    async def go():
        from .service.app import app

        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(
            transport=transport, base_url="http://gwlab", timeout=600.0
        ) as client:
            resp = await client.post(path, json=payload)
            return resp.status_code, resp.json()

    return asyncio.run(go())


def _load_model_doc(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _model_hash(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _write_manifest(prefix: Path, args, doc: dict, outputs: list[str], knobs: dict):
    manifest = RunManifest(
        command=args.command,
        argv=sys.argv[1:],
        model_sha256=_model_hash(doc),
        tolerances=knobs,
        seed=getattr(args, "seed", None),
        threads=getattr(args, "threads", None),
        artifact_version=__version__,
        outputs=outputs,
    )
    path = prefix.with_suffix(".manifest.json")
    path.write_text(json.dumps(asdict(manifest), indent=2) + "\n")
    return path


def _vector(text: str) -> list[int]:
    return [int(v) for v in text.strip().strip("()").split(",")]


def _fvector(text: str) -> list[float]:
    return [float(v) for v in text.strip().split(",")]


def _parse_path(text: str, x0: list[int]) -> dict:
    """Epoch list 'k:state[;k:state...]'; states like 2 or (1,1)."""
    times, states = [], []
    for chunk in text.split(";"):
        k, _, state = chunk.partition(":")
        times.append(int(k))
        states.append(_vector(state))
    return {"initial": x0, "times": times, "states": states}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gw", description=__doc__)
    p.add_argument("--server", default=None, help="URL of a running service")
    p.add_argument("--out", default=None, help="output file prefix")
    p.add_argument(
        "--threads",
        type=int,
        default=int(os.environ.get("GW_THREADS", "1")),
        help="worker cap for parallel modules (GW_THREADS)",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, **kw):
        sp = sub.add_parser(name, **kw)
        sp.add_argument("model", help="model JSON file")
        return sp

    cmd("validate")
    sp = cmd("spectral")
    sp.add_argument("--gap-n", type=int, default=40)
    cmd("extinction")
    sp = cmd("tilt")
    sp.add_argument("--a", default=None, help="tilt vector c1,...,cd")
    sp.add_argument("--critical", action="store_true")
    sp = cmd("qprocess")
    sp.add_argument("--a", default=None)
    sp.add_argument("--box-cap", type=int, default=30)
    sp = cmd("yaglom")
    sp.add_argument("--box-cap", type=int, default=40)
    sp.add_argument("--x0", default=None)
    sp = cmd("condition")
    sp.add_argument("--path", required=True)
    sp.add_argument("--set", dest="set_spec", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--x0", required=True)
    sp.add_argument("--box-cap", type=int, default=40)
    sp = cmd("double-limit")
    sp.add_argument("--z", required=True)
    sp.add_argument("--x0", default=None)
    sp.add_argument("--diagonal", type=int, default=25)
    sp.add_argument("--fractions", default="0.25,0.5,0.75")
    sp.add_argument("--fraction-m", type=int, default=50)
    sp.add_argument("--box-cap", type=int, default=60)

    prog = sub.add_parser("progeny")
    prog_sub = prog.add_subparsers(dest="progeny_command", required=True)

    def pcmd(name):
        sp = prog_sub.add_parser(name)
        sp.add_argument("model")
        return sp

    sp = pcmd("pmf")
    sp.add_argument("--x0", required=True)
    sp.add_argument("--n", required=True)
    sp.add_argument("--oracle", action="store_true")
    sp = pcmd("scaling")
    sp.add_argument("--x0", required=True)
    sp.add_argument("--n-min", type=int, default=50)
    sp.add_argument("--n-max", type=int, default=400)
    sp.add_argument("--n-step", type=int, default=10)
    sp = pcmd("theorem2")
    sp.add_argument("--x0", required=True)
    sp.add_argument("--path", required=True)
    sp.add_argument("--n-values", required=True)
    sp.add_argument("--a", default=None)
    sp = pcmd("lemma1")
    sp.add_argument("--x0", required=True)
    sp.add_argument("--a", required=True)
    sp.add_argument("--path", required=True, help="one or more specs joined by |")
    sp.add_argument("--n", required=True)

    sp = cmd("mc")
    sp.add_argument("--path", required=True)
    sp.add_argument("--x0", required=True)
    sp.add_argument("--condition", required=True, choices=["set", "nonextinct", "progeny"])
    sp.add_argument("--set", dest="set_spec", default=None)
    sp.add_argument("--n", type=int, default=0)
    sp.add_argument("--progeny", default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--reps", type=int, default=10_000)
    sp.add_argument("--horizon", type=int, default=100)

    sp = sub.add_parser("serve")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    return p


def _dispatch(args) -> tuple[str, dict, dict]:
    """Build (endpoint, payload, knobs) for the service call."""
    doc = _load_model_doc(args.model)
    knobs = {}
    if args.command == "validate":
        return "/validate", {"model": doc}, knobs
    if args.command == "spectral":
        knobs["gap_table_n"] = args.gap_n
        return "/spectral", {"model": doc, "gap_table_n": args.gap_n}, knobs
    if args.command == "extinction":
        knobs["fixed_point_tol"] = 1e-14
        return "/extinction", {"model": doc}, knobs
    if args.command == "tilt":
        payload = {"model": doc, "critical": args.critical}
        if args.a:
            payload["a"] = _fvector(args.a)
        knobs["critical_rho_tol"] = 1e-10
        return "/tilt", payload, knobs
    if args.command == "qprocess":
        payload = {"model": doc, "box_cap": args.box_cap}
        if args.a:
            payload["a"] = _fvector(args.a)
        knobs["box_cap"] = args.box_cap
        knobs["row_sum_tol"] = 1e-8
        return "/qprocess", payload, knobs
    if args.command == "yaglom":
        payload = {"model": doc, "box_cap": args.box_cap}
        if args.x0:
            payload["x0"] = _vector(args.x0)
        knobs["box_cap"] = args.box_cap
        knobs["route_agreement_tol"] = 1e-6
        return "/yaglom", payload, knobs
    if args.command == "condition":
        x0 = _vector(args.x0)
        payload = {
            "model": doc,
            "path": _parse_path(args.path, x0),
            "set_spec": args.set_spec,
            "n": args.n,
            "box_cap": args.box_cap,
        }
        knobs["box_cap"] = args.box_cap
        return "/condition", payload, knobs
    if args.command == "double-limit":
        payload = {
            "model": doc,
            "z": _vector(args.z),
            "diagonal_m": args.diagonal,
            "fractions": [float(t) for t in args.fractions.split(",") if t],
            "fraction_m": args.fraction_m,
            "box_cap": args.box_cap,
        }
        if args.x0:
            payload["x0"] = _vector(args.x0)
        knobs["box_cap"] = args.box_cap
        return "/double-limit", payload, knobs
    if args.command == "progeny":
        if args.progeny_command == "pmf":
            return (
                "/progeny/pmf",
                {
                    "model": doc,
                    "x0": _vector(args.x0),
                    "n": _vector(args.n),
                    "oracle": args.oracle,
                },
                knobs,
            )
        if args.progeny_command == "scaling":
            knobs.update(n_min=args.n_min, n_max=args.n_max, n_step=args.n_step)
            return (
                "/progeny/scaling",
                {
                    "model": doc,
                    "x0": _vector(args.x0),
                    "n_min": args.n_min,
                    "n_max": args.n_max,
                    "n_step": args.n_step,
                },
                knobs,
            )
        if args.progeny_command == "theorem2":
            payload = {
                "model": doc,
                "path": _parse_path(args.path, _vector(args.x0)),
                "n_values": [int(v) for v in args.n_values.split(",")],
            }
            if args.a:
                payload["a"] = _fvector(args.a)
            return "/progeny/theorem2", payload, knobs
        x0 = _vector(args.x0)
        return (
            "/progeny/lemma1",
            {
                "model": doc,
                "a": _fvector(args.a),
                "x0": x0,
                "paths": [_parse_path(s, x0) for s in args.path.split("|")],
                "n": _vector(args.n),
            },
            knobs,
        )
    if args.command == "mc":
        payload = {
            "model": doc,
            "path": _parse_path(args.path, _vector(args.x0)),
            "condition_kind": args.condition,
            "n": args.n,
            "seed": args.seed,
            "replicates": args.reps,
            "horizon": args.horizon,
            "threads": args.threads,
        }
        if args.set_spec:
            payload["set_spec"] = args.set_spec
        if args.progeny:
            payload["progeny"] = _vector(args.progeny)
        knobs.update(seed=args.seed, replicates=args.reps, horizon=args.horizon)
        return "/mc", payload, knobs
    raise SystemExit(f"unhandled command {args.command}")


def _tabulate(command: str, progeny_command: str | None, body: dict):
    """Flatten a response body into (header, rows) for CSV."""
    if command == "validate":
        return ["field", "value"], [[k, v] for k, v in body.items()]
    if command == "spectral":
        rows = [["rho", 0, body["rho"]]]
        rows += [["u", i, v] for i, v in enumerate(body["u"])]
        rows += [["v", i, v] for i, v in enumerate(body["v"])]
        rows += [["gap", n, g] for n, g in body["gaps"]]
        return ["field", "index", "value"], rows
    if command == "extinction":
        rows = [["q", i, v] for i, v in enumerate(body["q"])]
        rows += [["iterations", 0, body["iterations"]], ["residual", 0, body["residual"]]]
        return ["field", "index", "value"], rows
    if command == "tilt":
        rows = [["a", i, v] for i, v in enumerate(body["a"])]
        rows += [["rho_bar", 0, body["rho_bar"]]]
        rows += [["q", i, v] for i, v in enumerate(body["q"])]
        rows += [["residual", 0, body["residual"]]]
        return ["field", "index", "value"], rows
    if command == "qprocess":
        rows = [[*e["x"], *e["y"], e["value"]] for e in body["entries"]]
        d = len(body["u_bar"])
        header = [f"x{i+1}" for i in range(d)] + [f"y{i+1}" for i in range(d)] + ["value"]
        return header, rows
    if command == "yaglom":
        d = len(body["g_grad_at_1"])
        rows = [["nu", *r["state"], r["mass"]] for r in body["nu"]]
        rows += [["mu_bar", *r["state"], r["mass"]] for r in body["mu_bar"]]
        rows += [["gamma", *[0] * d, body["gamma"]]]
        rows += [["g_grad", *[i] * d, v] for i, v in enumerate(body["g_grad_at_1"])]
        rows += [["rho_box", *[0] * d, body["rho_box"]]]
        rows += [["route_tv_gap", *[0] * d, body["route_tv_gap"]]]
        header = ["field"] + [f"k{i+1}" for i in range(d)] + ["value"]
        return header, rows
    if command == "condition":
        return ["probability", "q_process_rhs", "gap"], [
            [body["probability"], body["q_process_rhs"], body["gap"]]
        ]
    if command == "double-limit":
        return (
            ["schedule", "k", "n", "value_at_z", "gap_at_z", "tv_to_mu_bar"],
            [
                [r["schedule"], r["k"], r["n"], r["value_at_z"], r["gap_at_z"], r["tv_to_mu_bar"]]
                for r in body["rows"]
            ],
        )
    if command == "progeny":
        if progeny_command == "pmf":
            row = [body["value"]]
            header = ["value"]
            if body.get("dp_value") is not None:
                header += ["dp_value", "gap"]
                row += [body["dp_value"], body["gap"]]
            return header, [row]
        if progeny_command == "scaling":
            rows = [[r["n"], *r["target"], r["value"]] for r in body["rows"]]
            rows.append(["plateau", *[""] * len(body["rows"][0]["target"]), body["plateau"]])
            rows.append(
                ["formula_constant", *[""] * len(body["rows"][0]["target"]), body["formula_constant"]]
            )
            d = len(body["rows"][0]["target"])
            return ["n"] + [f"m{i+1}" for i in range(d)] + ["value"], rows
        if progeny_command == "theorem2":
            d = len(body["u_bar"])
            return (
                ["n"] + [f"m{i+1}" for i in range(d)] + ["conditional", "limit", "gap"],
                [
                    [r["n"], *r["target"], r["conditional"], r["limit"], r["gap"]]
                    for r in body["rows"]
                ],
            )
        return (
            ["times", "states", "lhs", "rhs", "discrepancy"],
            [
                [
                    ";".join(str(t) for t in r["times"]),
                    ";".join(str(tuple(s)) for s in r["states"]),
                    r["lhs"],
                    r["rhs"],
                    r["discrepancy"],
                ]
                for r in body["rows"]
            ]
            + [["max", "", "", "", body["max_discrepancy"]]],
        )
    if command == "mc":
        return ["estimate", "std_error", "n_effective", "censored"], [
            [body["estimate"], body["std_error"], body["n_effective"], body["censored"]]
        ]
    return ["key", "value"], [[k, json.dumps(v)] for k, v in body.items()]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        uvicorn.run("gwlab.service.app:app", host=args.host, port=args.port)
        return 0
    try:
        endpoint, payload, knobs = _dispatch(args)
    except FileNotFoundError as exc:
        print(json.dumps({"error": "validation", "message": str(exc)}), file=sys.stderr)
        return 2
    except (ValueError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": "validation", "message": str(exc)}), file=sys.stderr)
        return 2
    status, body = _request(args.server, endpoint, payload)
    if status != 200:
        kind = body.get("kind", "validation" if status == 422 else "error")
        message = body.get("message", json.dumps(body))
        print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
        return EXIT_BY_KIND.get(kind, 1)

    progeny_command = getattr(args, "progeny_command", None)
    name = args.command if not progeny_command else f"{args.command}-{progeny_command}"
    prefix = Path(args.out) if args.out else Path(f"gw-{name}")
    outputs = []
    if args.command == "tilt":
        model_out = prefix.with_suffix(".model.json")
        model_out.write_text(json.dumps(body["tilted_model"], indent=2) + "\n")
        outputs.append(str(model_out))
    header, rows = _tabulate(args.command, progeny_command, body)
    csv_path = prefix.with_suffix(".csv")
    _write_csv(csv_path, header, rows)
    outputs.append(str(csv_path))
    manifest = _write_manifest(prefix, args, _load_model_doc(args.model), outputs, knobs)
    outputs.append(str(manifest))
    print("\n".join(outputs))
    return 0


if __name__ == "__main__":
    sys.exit(main())
