"""Command-line interface: a thin client of the HTTP service.

Subcommands reduce|solve|synthesize|bench build a JSON request and POST it to
the service.  By default the FastAPI app is driven in-process (no server
needed); ``--server URL`` targets a remote instance instead.  Exit codes:
0 success, 2 when the requested tolerance was not met, 1 on errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx

from .schemas import ModelSpec


def _model_spec(args) -> dict:
    sources = []
    if getattr(args, "model", None):
        sources.append({"text": Path(args.model).read_text()})
    if getattr(args, "mm1", None):
        cap, lam, mu = args.mm1.split(",")
        sources.append(
            {"mm1": {"cap": int(cap), "lambda_arrival": float(lam), "mu_service": float(mu)}}
        )
    if getattr(args, "tandem", None):
        vals = [float(v) for v in args.tandem.split(",")]
        if len(vals) not in (7, 9):
            raise SystemExit("--tandem needs cap,lam,mu1,mu2,mu3,a,b[,p,delta_lambda]")
        keys = ["cap", "lam", "mu1", "mu2", "mu3", "a", "b", "p", "delta_lambda"]
        d = dict(zip(keys, vals))
        d["cap"] = int(d["cap"])
        sources.append({"tandem": d})
    if getattr(args, "tandem_ctmdp", None):
        vals = [float(v) for v in args.tandem_ctmdp.split(",")]
        if len(vals) != 5:
            raise SystemExit("--tandem-ctmdp needs cap,lam,mu1,mu2,mu3")
        sources.append(
            {
                "tandem_ctmdp": {
                    "cap": int(vals[0]),
                    "lam": vals[1],
                    "mu1": vals[2],
                    "mu2": vals[3],
                    "mu3": vals[4],
                }
            }
        )
    if getattr(args, "random", None):
        parts = args.random.split(",")
        d = {"n": int(parts[0]), "seed": int(parts[1]) if len(parts) > 1 else 0}
        if len(parts) > 2:
            d["density"] = float(parts[2])
        sources.append({"random": d})
    if len(sources) != 1:
        raise SystemExit("exactly one of --model/--mm1/--tandem/--tandem-ctmdp/--random required")
    spec = sources[0]
    ModelSpec.model_validate(spec)  # fail early with a clear message
    return spec


def _post(args, path: str, payload: dict) -> dict:
    if args.server:
        resp = httpx.post(args.server.rstrip("/") + path, json=payload, timeout=None)
    else:
        from fastapi.testclient import TestClient

        from .service import app

        with TestClient(app, raise_server_exceptions=False) as client:
            resp = client.post(path, json=payload)
    if resp.status_code != 200:
        try:
            body = resp.json()
            msg = f"{body.get('code', 'error')}: {body.get('message', resp.text)}"
        except Exception:
            msg = resp.text
        print(f"error: {msg}", file=sys.stderr)
        raise SystemExit(1)
    return resp.json()


def _write(outdir: str | None, name: str, content: str) -> None:
    if outdir:
        path = Path(outdir)
        path.mkdir(parents=True, exist_ok=True)
        (path / name).write_text(content)
        print(f"wrote {path / name}")
    else:
        sys.stdout.write(content)


def _add_model_args(p: argparse.ArgumentParser, ctmdp: bool = False) -> None:
    p.add_argument("--model", help="path to a model file")
    if not ctmdp:
        p.add_argument("--mm1", help="cap,lambda,mu")
        p.add_argument("--tandem", help="cap,lam,mu1,mu2,mu3,a,b[,p,delta_lambda]")
        p.add_argument("--random", help="n,seed[,density]")
    else:
        p.add_argument("--tandem-ctmdp", dest="tandem_ctmdp", help="cap,lam,mu1,mu2,mu3")
    p.add_argument("--server", help="remote service URL (default: run in-process)")
    p.add_argument("--out", help="output directory for CSV artifacts")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ctreach", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_red = sub.add_parser("reduce", help="certified order reduction summary")
    _add_model_args(p_red)
    p_red.add_argument("--T", type=float, required=True)
    p_red.add_argument("--eps", type=float, default=0.0)
    p_red.add_argument("--r", type=int)

    p_sol = sub.add_parser("solve", help="certified reachability trajectory CSV")
    _add_model_args(p_sol)
    p_sol.add_argument("--T", type=float, required=True)
    p_sol.add_argument("--eps", type=float, default=0.0)
    p_sol.add_argument("--r", type=int)
    p_sol.add_argument("--points", type=int, default=200)

    p_syn = sub.add_parser("synthesize", help="dwell-time policy synthesis")
    _add_model_args(p_syn, ctmdp=True)
    p_syn.add_argument("--T", type=float, required=True)
    p_syn.add_argument("--eps", type=float, default=0.1)
    p_syn.add_argument("--tau", type=float, required=True)
    p_syn.add_argument("--delta", type=float)

    p_ben = sub.add_parser("bench", help="runtime comparison sweep")
    p_ben.add_argument("--sizes", default="100,200,500")
    p_ben.add_argument("--T", type=float, default=5.0)
    p_ben.add_argument("--eps", type=float, default=0.01)
    p_ben.add_argument("--trunc-tol", dest="trunc_tol", type=float, default=0.01)
    p_ben.add_argument("--seed", type=int, default=1)
    p_ben.add_argument("--reps", type=int, default=5)
    p_ben.add_argument("--server", help="remote service URL (default: run in-process)")
    p_ben.add_argument("--out", help="output directory for CSV artifacts")

    args = parser.parse_args(argv)

    if args.command == "reduce":
        payload = {"model": _model_spec(args), "T": args.T, "eps": args.eps}
        if args.r is not None:
            payload["r"] = args.r
        body = _post(args, "/reduce", payload)
        print(json.dumps(body, indent=2))
        return 0 if body["tolerance_met"] else 2

    if args.command == "solve":
        payload = {
            "model": _model_spec(args),
            "T": args.T,
            "eps": args.eps,
            "n_points": args.points,
        }
        if args.r is not None:
            payload["r"] = args.r
        body = _post(args, "/solve", payload)
        csv = body.pop("csv")
        print(json.dumps(body, indent=2))
        _write(args.out, "solution.csv", csv)
        return 0 if body["tolerance_met"] else 2

    if args.command == "synthesize":
        payload = {
            "model": _model_spec(args),
            "T": args.T,
            "eps": args.eps,
            "tau": args.tau,
        }
        if args.delta is not None:
            payload["delta"] = args.delta
        body = _post(args, "/synthesize", payload)
        policy_csv = body.pop("policy_csv")
        band_csv = body.pop("band_csv")
        argmax_csv = body.pop("argmax_csv")
        print(json.dumps(body, indent=2))
        _write(args.out, "policy.csv", policy_csv)
        _write(args.out, "band.csv", band_csv)
        _write(args.out, "argmax.csv", argmax_csv)
        return 0 if body["tolerance_met"] else 2

    if args.command == "bench":
        payload = {
            "kind": "random",
            "sizes": [int(s) for s in args.sizes.split(",")],
            "T": args.T,
            "eps": args.eps,
            "trunc_tol": args.trunc_tol,
            "seed": args.seed,
            "reps": args.reps,
        }
        body = _post(args, "/bench", payload)
        csv = body.pop("csv")
        print(json.dumps(body, indent=2))
        _write(args.out, "bench.csv", csv)
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
