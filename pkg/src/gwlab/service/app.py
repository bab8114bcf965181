"""FastAPI service exposing the laboratory; the CLI is a thin client of it."""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..conditioning import (
    conditional_path_law,
    diagonal_schedule,
    double_limit_scan,
    fraction_schedule,
    parse_set_spec,
    q_kernel,
    q_process_rhs,
    yaglom,
)
from ..errors import GWError
from ..lattice import Box, PathEvent
from ..model import BranchingModel, mean_matrix, validate
from ..montecarlo import MCCondition, SimConfig, conditioned_estimate
from ..progeny import (
    ProgenyQuery,
    lemma1_check,
    progeny_pmf_dp,
    progeny_pmf_formula,
    proposition_scaling,
    theorem2_verify,
)
from ..spectral import mean_power_diagnostic, perron
from ..tilt import TiltVector, associate, critical_tilt, extinction_vector
from . import schemas as S

app = FastAPI(title="gwlab", version=__version__)


@app.exception_handler(GWError)
async def gw_error_handler(request: Request, exc: GWError):
    return JSONResponse(
        status_code=400,
        content=S.ErrorBody(kind=exc.kind, message=str(exc)).model_dump(),
    )


def _parse_model(model_in: S.ModelIn) -> BranchingModel:
    return BranchingModel.from_dict(model_in.to_doc())


def _box(model: BranchingModel, caps: list[int] | None, cap: int) -> Box:
    if caps is not None:
        return Box(upper=tuple(caps))
    return Box(upper=(cap,) * model.d)


def _path(p: S.PathIn) -> PathEvent:
    return PathEvent(
        initial=tuple(p.initial),
        times=tuple(p.times),
        states=tuple(tuple(s) for s in p.states),
    )


def _rows(dist) -> list[S.MassRow]:
    return [S.MassRow(state=list(s), mass=m) for s, m in dist.rows()]


@app.get("/healthz")
def healthz():
    return {"status": "ok", "version": __version__}


@app.post("/validate", response_model=S.ValidateResponse)
def validate_endpoint(req: S.ValidateRequest):
    diag = validate(_parse_model(req.model))
    return S.ValidateResponse(
        nonsingular=diag.nonsingular,
        positive_regular=diag.positive_regular,
        positive_regular_witness=diag.positive_regular_witness,
        aperiodic_A5=diag.aperiodic_A5,
        q_positive=diag.q_positive,
        moment_orders_available="inf",
    )


@app.post("/spectral", response_model=S.SpectralResponse)
def spectral_endpoint(req: S.SpectralRequest):
    model = _parse_model(req.model)
    sd = perron(mean_matrix(model))
    gaps = mean_power_diagnostic(model, req.gap_table_n)
    return S.SpectralResponse(rho=sd.rho, u=sd.u.tolist(), v=sd.v.tolist(), gaps=gaps)


@app.post("/extinction", response_model=S.ExtinctionResponse)
def extinction_endpoint(req: S.ExtinctionRequest):
    ext = extinction_vector(_parse_model(req.model))
    return S.ExtinctionResponse(
        q=ext.q.tolist(), iterations=ext.iterations, residual=ext.residual
    )


@app.post("/tilt", response_model=S.TiltResponse)
def tilt_endpoint(req: S.TiltRequest):
    model = _parse_model(req.model)
    if req.critical:
        a = critical_tilt(model)
    elif req.a is not None:
        a = TiltVector(a=np.asarray(req.a, dtype=float))
    else:
        a = TiltVector(a=extinction_vector(model).q)
    tilted = associate(model, a)
    sd = perron(mean_matrix(tilted))
    ext = extinction_vector(model)
    return S.TiltResponse(
        a=a.a.tolist(),
        rho_bar=sd.rho,
        q=ext.q.tolist(),
        residual=ext.residual,
        tilted_model=tilted.to_dict(),
    )


@app.post("/qprocess", response_model=S.QProcessResponse)
def qprocess_endpoint(req: S.QProcessRequest):
    model = _parse_model(req.model)
    a = np.asarray(req.a, dtype=float) if req.a is not None else extinction_vector(model).q
    box = _box(model, req.box, req.box_cap)
    qk = q_kernel(model, a, box)
    entries = []
    states = box.states()
    for i, x in enumerate(states):
        if x.sum() == 0:
            continue
        row = qk.matrix[i]
        for j, value in enumerate(row):
            if value > 0:
                entries.append(
                    S.KernelEntry(
                        x=[int(c) for c in x],
                        y=[int(c) for c in states[j]],
                        value=float(value),
                    )
                )
    return S.QProcessResponse(
        rho_bar=qk.rho_bar, u_bar=qk.u_bar.tolist(), entries=entries
    )


@app.post("/yaglom", response_model=S.YaglomResponse)
def yaglom_endpoint(req: S.YaglomRequest):
    model = _parse_model(req.model)
    box = _box(model, req.box, req.box_cap)
    x0 = tuple(req.x0) if req.x0 is not None else None
    yg = yaglom(model, box, x0=x0)
    return S.YaglomResponse(
        nu=_rows(yg.nu),
        gamma=yg.gamma,
        g_grad_at_1=yg.g_grad_at_1.tolist(),
        mu_bar=_rows(yg.mu_bar),
        rho_box=yg.rho_box,
        route_tv_gap=yg.route_tv_gap,
        leak_per_step=yg.leak_per_step,
    )


@app.post("/condition", response_model=S.ConditionResponse)
def condition_endpoint(req: S.ConditionRequest):
    model = _parse_model(req.model)
    ev = _path(req.path)
    cond_set = parse_set_spec(req.set_spec, model.d)
    box = _box(model, req.box, req.box_cap)
    prob = conditional_path_law(model, ev, cond_set, req.n, box)
    rhs = q_process_rhs(model, extinction_vector(model).q, ev, box)
    return S.ConditionResponse(
        probability=prob, q_process_rhs=rhs, gap=abs(prob - rhs)
    )


@app.post("/double-limit", response_model=S.DoubleLimitResponse)
def double_limit_endpoint(req: S.DoubleLimitRequest):
    model = _parse_model(req.model)
    box = _box(model, req.box, req.box_cap)
    x0 = tuple(req.x0) if req.x0 is not None else None
    out = []
    schedules = [("diagonal", diagonal_schedule(req.diagonal_m))]
    for t in req.fractions:
        schedules.append((f"t={t}", fraction_schedule(t, req.fraction_m)))
    for name, schedule in schedules:
        rows = double_limit_scan(model, tuple(req.z), schedule, box, x0=x0)
        out.extend(
            S.DoubleLimitRow(
                schedule=name,
                k=r.k,
                n=r.n,
                value_at_z=r.value_at_z,
                gap_at_z=r.gap_at_z,
                tv_to_mu_bar=r.tv_to_mu_bar,
            )
            for r in rows
        )
    return S.DoubleLimitResponse(rows=out)


@app.post("/progeny/pmf", response_model=S.ProgenyPmfResponse)
def progeny_pmf_endpoint(req: S.ProgenyPmfRequest):
    model = _parse_model(req.model)
    query = ProgenyQuery(x0=tuple(req.x0), n=tuple(req.n))
    value = progeny_pmf_formula(model, query)
    dp_value = gap = None
    if req.oracle:
        dp_value = progeny_pmf_dp(model, query.x0, query.n).pmf(query.n)
        gap = abs(value - dp_value)
    return S.ProgenyPmfResponse(value=value, dp_value=dp_value, gap=gap)


@app.post("/progeny/scaling", response_model=S.ProgenyScalingResponse)
def progeny_scaling_endpoint(req: S.ProgenyScalingRequest):
    model = _parse_model(req.model)
    rep = proposition_scaling(
        model, tuple(req.x0), range(req.n_min, req.n_max + 1, req.n_step)
    )
    return S.ProgenyScalingResponse(
        w=rep.w.tolist(),
        rows=[S.ScalingRow(n=n, target=list(m), value=v) for n, m, v in rep.rows],
        plateau=rep.plateau,
        formula_constant=rep.formula_constant,
        skipped=[f"n={n} target={m}: {why}" for n, m, why in rep.skipped],
    )


@app.post("/progeny/theorem2", response_model=S.Theorem2Response)
def progeny_theorem2_endpoint(req: S.Theorem2Request):
    model = _parse_model(req.model)
    a = np.asarray(req.a, dtype=float) if req.a is not None else None
    rep = theorem2_verify(model, _path(req.path), req.n_values, a=a)
    return S.Theorem2Response(
        a=rep.a.tolist(),
        u_bar=rep.u_bar.tolist(),
        v_bar=rep.v_bar.tolist(),
        rows=[
            S.Theorem2Row(
                n=r.n,
                target=list(r.target),
                conditional=r.conditional,
                limit=r.limit,
                gap=r.gap,
            )
            for r in rep.rows
        ],
        skipped=[f"n={n} target={m}: {why}" for n, m, why in rep.skipped],
    )


@app.post("/progeny/lemma1", response_model=S.Lemma1Response)
def progeny_lemma1_endpoint(req: S.Lemma1Request):
    model = _parse_model(req.model)
    paths = [_path(p) for p in req.paths]
    out = lemma1_check(
        model, np.asarray(req.a, dtype=float), tuple(req.x0), paths, tuple(req.n)
    )
    return S.Lemma1Response(
        max_discrepancy=out["max_discrepancy"],
        rows=[
            S.Lemma1Row(
                times=list(ev.times),
                states=[list(s) for s in ev.states],
                lhs=lhs,
                rhs=rhs,
                discrepancy=disc,
            )
            for ev, lhs, rhs, disc in out["rows"]
        ],
    )


@app.post("/mc", response_model=S.MCResponse)
def mc_endpoint(req: S.MCRequest):
    model = _parse_model(req.model)
    ev = _path(req.path)
    if req.condition_kind == "set":
        cond = MCCondition(
            kind="set", n=req.n, S=parse_set_spec(req.set_spec or "", model.d)
        )
    elif req.condition_kind == "nonextinct":
        cond = MCCondition(kind="nonextinct", n=req.n)
    else:
        cond = MCCondition(kind="progeny", progeny=tuple(req.progeny or ()))
    cfg = SimConfig(
        seed=req.seed,
        replicates=req.replicates,
        horizon=req.horizon,
        pop_cap=req.pop_cap,
    )
    est = conditioned_estimate(model, ev, cond, cfg, threads=req.threads)
    return S.MCResponse(
        estimate=est.estimate,
        std_error=est.std_error,
        n_effective=est.n_effective,
        censored=est.censored,
    )
