"""FastAPI service wrapping the analysis workflows.

All endpoints are stateless request/response: the model travels inline (text
format or builder parameters) and the response carries summaries plus
CSV payloads.  Analysis errors map to HTTP 422 with a stable error code;
malformed models map to 400.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import bench
from .errors import CtreachError, ModelFormatError
from .models import Ctmc, Ctmdp, parse_model
from .schemas import (
    BenchRequest,
    BenchResponse,
    ErrorBody,
    ModelSpec,
    ReduceRequest,
    ReduceResponse,
    RuntimeRecordModel,
    SolveRequest,
    SolveResponse,
    SynthesizeRequest,
    SynthesizeResponse,
)

app = FastAPI(
    title="ctreach",
    description="Certified reduced-order time-bounded reachability for CTMCs/CTMDPs",
    version="0.1.0",
)


@app.exception_handler(CtreachError)
async def _ctreach_error(_: Request, exc: CtreachError) -> JSONResponse:
    status = 400 if isinstance(exc, ModelFormatError) else 422
    return JSONResponse(
        status_code=status,
        content=ErrorBody(code=exc.code, message=exc.message).model_dump(),
    )


def _materialize(spec: ModelSpec) -> Ctmc | Ctmdp:
    if spec.text is not None:
        return parse_model(spec.text)
    if spec.mm1 is not None:
        p = spec.mm1
        return bench.build_mm1(p.cap, p.lambda_arrival, p.mu_service)
    if spec.tandem is not None:
        p = spec.tandem
        return bench.build_tandem(p.cap, p.lam, p.mu1, p.mu2, p.mu3, p.a, p.b, p.p, p.delta_lambda)
    if spec.tandem_ctmdp is not None:
        p = spec.tandem_ctmdp
        return bench.build_tandem_ctmdp(p.cap, p.lam, p.mu1, p.mu2, p.mu3, tuple(tuple(m) for m in p.modes))
    p = spec.random
    return bench.build_random_generator(p.n, p.seed, p.density)


def _require_ctmc(model) -> Ctmc:
    if not isinstance(model, Ctmc):
        raise CtreachError("invalid-input", "this endpoint needs a CTMC model")
    return model


def _require_ctmdp(model) -> Ctmdp:
    if not isinstance(model, Ctmdp):
        raise CtreachError("invalid-input", "this endpoint needs a CTMDP model")
    return model


@app.get("/health")
def health() -> dict:
    return {"status": "ok"}


@app.post("/reduce", response_model=ReduceResponse)
def reduce_endpoint(req: ReduceRequest) -> ReduceResponse:
    model = _require_ctmc(_materialize(req.model))
    out = bench.run_reduce(model, req.horizon, req.eps, r=req.r)
    return ReduceResponse(
        m=out["m"],
        r=out["r"],
        kappa=out["kappa"],
        coeff=out["coeff"],
        coeff_gamma=out["coeff_gamma"],
        bound_at_T=out["bound_at_T"],
        tolerance_met=out["tolerance_met"],
        removed_states=list(out["removed_states"]),
    )


@app.post("/solve", response_model=SolveResponse)
def solve_endpoint(req: SolveRequest) -> SolveResponse:
    model = _require_ctmc(_materialize(req.model))
    out = bench.run_solve(model, req.horizon, req.eps, r=req.r, n_points=req.n_points)
    return SolveResponse(
        m=out["m"],
        r=out["r"],
        kappa=out["kappa"],
        coeff=out["coeff"],
        coeff_gamma=out["coeff_gamma"],
        bound_at_T=out["bound_at_T"],
        tolerance_met=out["tolerance_met"],
        removed_states=list(out["removed_states"]),
        csv=out["csv"],
    )


@app.post("/synthesize", response_model=SynthesizeResponse)
def synthesize_endpoint(req: SynthesizeRequest) -> SynthesizeResponse:
    model = _require_ctmdp(_materialize(req.model))
    out = bench.run_synthesize(
        model,
        req.horizon,
        req.eps,
        req.tau,
        delta=req.delta,
        common_identity_m=req.identity_m,
    )
    return SynthesizeResponse(
        r=out["r"],
        bound=out["bound"],
        tolerance_met=out["tolerance_met"],
        segments=[(s, d) for s, d in out["policy"].segments],
        policy_csv=out["policy_csv"],
        band_csv=out["band_csv"],
        argmax_csv=out["argmax_csv"],
    )


@app.post("/bench", response_model=BenchResponse)
def bench_endpoint(req: BenchRequest) -> BenchResponse:
    config = bench.BenchConfig(
        kind=req.kind,
        sizes=tuple(req.sizes),
        horizon=req.horizon,
        eps_max=req.eps,
        trunc_tol=req.trunc_tol,
        seed=req.seed,
        reps=req.reps,
    )
    out = bench.run_bench(config)
    return BenchResponse(
        records=[RuntimeRecordModel(**r.__dict__) for r in out["records"]],
        csv=out["csv"],
        consistent=out["consistent"],
    )
