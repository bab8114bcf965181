"""Extinction probabilities, exponentially tilted (associated) processes,
and the scalar-family solver for a criticality-restoring tilt."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssumptionError, IterationLimitError, ModelValidationError
from .model import BranchingModel, OffspringLaw, _poly_eval, mean_matrix
from .spectral import SpectralData, perron

FIXED_POINT_TOL = 1e-14
RESIDUAL_TOL = 1e-12
MAX_FIXED_POINT_ITERS = 10**5
CRITICAL_RHO_TOL = 1e-10


@dataclass(frozen=True)
class TiltVector:
    a: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        if np.any(a <= 0):
            raise ModelValidationError("tilt vector must be strictly positive")
        object.__setattr__(self, "a", a)


@dataclass(frozen=True)
class ExtinctionData:
    q: np.ndarray
    iterations: int
    residual: float


def extinction_vector(model: BranchingModel) -> ExtinctionData:
    """Minimal fixed point of f in [0,1]^d.

    For rho <= 1 the minimal fixed point is 1 exactly, so the iteration is
    skipped; otherwise q^(k+1) = f(q^(k)) from 0 converges geometrically.
    """
    sd = perron(mean_matrix(model))
    if sd.rho <= 1.0 + CRITICAL_RHO_TOL:
        return ExtinctionData(q=np.ones(model.d), iterations=0, residual=0.0)
    q = np.zeros(model.d)
    for it in range(1, MAX_FIXED_POINT_ITERS + 1):
        q_next = _poly_eval(model, q)
        if np.max(np.abs(q_next - q)) < FIXED_POINT_TOL:
            q = q_next
            break
        q = q_next
    else:
        raise IterationLimitError("extinction fixed point did not converge")
    residual = float(np.max(np.abs(_poly_eval(model, q) - q)))
    if residual > RESIDUAL_TOL:
        raise IterationLimitError(f"fixed-point residual {residual:.3e} too large")
    if np.any(q <= 0):
        raise AssumptionError("some extinction probability is zero (q > 0 fails)")
    return ExtinctionData(q=q, iterations=it, residual=residual)


def associate(model: BranchingModel, a: TiltVector | np.ndarray) -> BranchingModel:
    """Tilted model with masses a^k p_i(k) / f_i(a); supports unchanged."""
    if not isinstance(a, TiltVector):
        a = TiltVector(a=np.asarray(a, dtype=float))
    av = a.a
    if av.shape != (model.d,):
        raise ModelValidationError(f"tilt vector must have length {model.d}")
    laws = []
    for law in model.laws:
        weights = np.prod(av[None, :] ** law.atoms, axis=1)
        fa = float(law.probs @ weights)
        laws.append(OffspringLaw(atoms=law.atoms, probs=law.probs * weights / fa))
    return BranchingModel(d=model.d, laws=tuple(laws))


def tilted_spectral(model: BranchingModel, a) -> SpectralData:
    return perron(mean_matrix(associate(model, a)))


def critical_tilt(
    model: BranchingModel,
    bracket: tuple[float, float] = (1e-3, 10.0),
    grid: int = 64,
) -> TiltVector:
    """Scalar c with perron(associate(model, c*1)).rho = 1, to 1e-10.

    A geometric grid scan brackets a sign change of rho_bar(c) - 1, then
    bisection refines it; monotonicity of rho_bar(c) is not assumed.
    """
    base = perron(mean_matrix(model))
    if abs(base.rho - 1.0) <= CRITICAL_RHO_TOL:
        return TiltVector(a=np.ones(model.d))

    def gap(c: float) -> float:
        return tilted_spectral(model, c * np.ones(model.d)).rho - 1.0

    cs = np.geomspace(bracket[0], bracket[1], grid)
    values = [gap(c) for c in cs]
    lo = hi = None
    for (c1, g1), (c2, g2) in zip(zip(cs, values), zip(cs[1:], values[1:])):
        if g1 == 0.0:
            return TiltVector(a=c1 * np.ones(model.d))
        if g1 * g2 < 0:
            lo, hi, glo = c1, c2, g1
            break
    else:
        if values[-1] == 0.0:
            return TiltVector(a=cs[-1] * np.ones(model.d))
        raise AssumptionError(
            "no criticality-restoring scalar tilt on the bracket "
            f"[{bracket[0]}, {bracket[1]}]; supply a tilt vector manually"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm = gap(mid)
        if abs(gm) <= CRITICAL_RHO_TOL:
            return TiltVector(a=mid * np.ones(model.d))
        if glo * gm < 0:
            hi = mid
        else:
            lo, glo = mid, gm
    raise IterationLimitError("critical-tilt bisection did not converge")


@dataclass(frozen=True)
class SubcriticalityReport:
    checked: bool
    rho: float
    rho_bar: float | None
    q: np.ndarray
    note: str


def subcriticality_check(model: BranchingModel) -> SubcriticalityReport:
    """Assert that tilting a supercritical model by q is subcritical."""
    sd = perron(mean_matrix(model))
    if sd.rho <= 1.0 + CRITICAL_RHO_TOL:
        return SubcriticalityReport(
            checked=False,
            rho=sd.rho,
            rho_bar=None,
            q=np.ones(model.d),
            note="check skipped: q = 1, tilt neutral",
        )
    ext = extinction_vector(model)
    rho_bar = tilted_spectral(model, ext.q).rho
    if rho_bar >= 1.0:
        raise AssumptionError(
            f"q-tilted process has rho_bar = {rho_bar!r} >= 1; inconsistent model"
        )
    return SubcriticalityReport(
        checked=True, rho=sd.rho, rho_bar=rho_bar, q=ext.q, note="ok"
    )
