"""Total-progeny distributions and the laws conditioned on them.

The exact pmf comes from a signed determinant expansion over convolution
powers of the offspring laws; an independent forward DP over (state,
accumulated progeny) serves as its oracle.  Conditioning on a given total
progeny is tilt-invariant, which the check here verifies as an exact
identity, and for large progeny the conditioned path law approaches the
surviving-process kernel of the criticality-restoring tilt.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve as _scipy_convolve

from .errors import AssumptionError, DegenerateConditionError, ModelValidationError
from .lattice import (
    Box,
    PathEvent,
    SignedLatticeMeasure,
    joint_state_progeny,
    path_probability,
)
from .model import BranchingModel, covariance_matrices, mean_matrix, validate
from .spectral import spectral_of
from .tilt import TiltVector, associate, critical_tilt

MAX_TYPES_FOR_FORMULA = 4


@dataclass(frozen=True)
class ProgenyQuery:
    x0: tuple[int, ...]
    n: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(int(c) for c in self.x0))
        object.__setattr__(self, "n", tuple(int(c) for c in self.n))
        if sum(self.x0) == 0:
            raise ModelValidationError("initial state must be nonzero")
        if any(c < 0 for c in self.n):
            raise ModelValidationError("target progeny must be nonnegative")
        if any(n < x for n, x in zip(self.n, self.x0)):
            raise ModelValidationError("target progeny must dominate x0")


def _dense_law(law, shape) -> np.ndarray:
    out = np.zeros(shape)
    for k, p in zip(law.atoms, law.probs):
        idx = tuple(int(c) for c in k)
        if all(i < s for i, s in zip(idx, shape)):
            out[idx] += p
    return out


def _conv_trunc(a: np.ndarray, b: np.ndarray, shape) -> np.ndarray:
    if len(shape) == 1:
        return np.convolve(a, b)[: shape[0]]
    full = _scipy_convolve(a, b, mode="full", method="direct")
    return full[tuple(slice(0, s) for s in shape)]


def _conv_power(base: np.ndarray, m: int, shape) -> np.ndarray:
    """base^{*m} on the truncated box, by binary doubling."""
    result = np.zeros(shape)
    result[(0,) * len(shape)] = 1.0
    acc = base
    while m > 0:
        if m & 1:
            result = _conv_trunc(result, acc, shape)
        m >>= 1
        if m:
            acc = _conv_trunc(acc, acc, shape)
    return result


def _perm_signature(perm) -> int:
    inversions = sum(
        1
        for i in range(len(perm))
        for j in range(i + 1, len(perm))
        if perm[i] > perm[j]
    )
    return -1 if inversions % 2 else 1


def _signed_convolve(
    a: SignedLatticeMeasure, b: SignedLatticeMeasure
) -> SignedLatticeMeasure:
    shape = a.values.shape  # grid may be flat along coordinates with n_i = x0_i
    return SignedLatticeMeasure(
        box=a.box,
        values=_conv_trunc(a.values, b.values, shape),
        overflow_abs=a.overflow_abs + b.overflow_abs,  # zero here: box is lossless
    )


def progeny_pmf_formula(model: BranchingModel, query: ProgenyQuery) -> float:
    """P_{x0}(N = n) by the signed determinant expansion.

    One signed convolution chain per permutation sigma, with factors
    mu_i^sigma(k) = (n_i delta_{i, sigma(i)} - k_{sigma(i)}) p_i^{*n_i}(k),
    evaluated at n - x0 on the box [0, n - x0].  Truncation to that box is
    lossless because offspring vectors are nonnegative.
    """
    d = model.d
    if d > MAX_TYPES_FOR_FORMULA:
        raise ModelValidationError(
            f"determinant formula supports d <= {MAX_TYPES_FOR_FORMULA} (got {d})"
        )
    n = np.array(query.n)
    x0 = np.array(query.x0)
    if np.any(n == 0):
        raise ModelValidationError(
            "formula needs every progeny coordinate positive; use the DP oracle"
        )
    target = n - x0
    box = Box(upper=tuple(max(int(t), 1) for t in target))
    shape = tuple(int(t) + 1 for t in target)
    powers = []
    grids = np.indices(shape)  # grids[j] holds coordinate j at every box point
    for i, law in enumerate(model.laws):
        base = _dense_law(law, shape)
        powers.append(_conv_power(base, int(n[i]), shape))
    total = 0.0
    for perm in itertools.permutations(range(d)):
        sign = _perm_signature(perm)
        chain = None
        for i in range(d):
            coeff = (n[i] if perm[i] == i else 0.0) - grids[perm[i]]
            factor = SignedLatticeMeasure(box=box, values=coeff * powers[i])
            chain = factor if chain is None else _signed_convolve(chain, factor)
        total += sign * chain.values[tuple(int(t) for t in target)]
    return float(total / np.prod(n.astype(float)))


def progeny_pmf_dp(model: BranchingModel, x0, n_cap) -> "ProgenyTable":
    """Full table P_{x0}(N = n) for n <= n_cap via the joint-state DP.

    Runs the (state, accumulated progeny) recursion for ||n_cap||_1 steps;
    every tree with progeny inside the cap is extinct by then, so the mass
    at state zero is the exact pmf.
    """
    n_cap = tuple(int(c) for c in n_cap)
    box = Box(upper=n_cap)
    steps = sum(n_cap)
    joint = joint_state_progeny(
        model, x0, steps, box_state=box, box_progeny=box, leak_tol=np.inf
    )
    return ProgenyTable(
        x0=tuple(int(c) for c in x0),
        box=box,
        table=joint.at_extinction(),
        overflow=joint.overflow_state + joint.overflow_progeny,
    )


@dataclass(frozen=True)
class ProgenyTable:
    x0: tuple[int, ...]
    box: Box
    table: np.ndarray
    overflow: float

    def pmf(self, n) -> float:
        return float(self.table[tuple(int(c) for c in n)])


class ProgenyPowersD1:
    """Single-type pmf reader: P_x(N = m) = (x/m) p^{*m}(m - x).

    One incremental convolution-power table serves every initial state.
    """

    def __init__(self, model: BranchingModel, n_max: int):
        if model.d != 1:
            raise ModelValidationError("powers table is single-type only")
        self.n_max = int(n_max)
        cap = self.n_max + 1
        law = model.laws[0]
        dense = np.zeros(cap)
        for k, p in zip(law.atoms, law.probs):
            if int(k[0]) < cap:
                dense[int(k[0])] += p
        self.powers = np.zeros((self.n_max + 1, cap))
        self.powers[0, 0] = 1.0
        for m in range(1, self.n_max + 1):
            self.powers[m] = np.convolve(self.powers[m - 1], dense)[:cap]

    def pmf(self, x: int, m: int) -> float:
        if x == 0:
            return 1.0 if m == 0 else 0.0
        if m <= 0 or m < x or m > self.n_max:
            return 0.0
        return float(x / m * self.powers[m, m - x])


# -- conditioning on N = n -----------------------------------------------------


def _path_pins(ev: PathEvent):
    pins = {}
    for t, s in zip(ev.times, ev.states):
        if t in pins and pins[t] != s:
            return None  # contradictory constraints: the event is null
        pins[t] = s
    return pins


def _conditional_given_progeny(model: BranchingModel, ev: PathEvent, n) -> float:
    """P_{x0}(path | N = n), exact, via the joint DP run to extinction."""
    n = tuple(int(c) for c in n)
    box = Box(upper=tuple(max(1, c) for c in n))
    steps = max(sum(n), 1)
    denom = joint_state_progeny(
        model, ev.initial, steps, box_state=box, box_progeny=box, leak_tol=np.inf
    ).at_extinction()[n]
    if denom <= 0.0:
        raise DegenerateConditionError(f"P(N = {n}) vanishes")
    pins = _path_pins(ev)
    if pins is None:
        return 0.0
    if any(not box.contains(s) for s in pins.values()):
        return 0.0  # a pinned state already exceeds the total progeny
    num = joint_state_progeny(
        model,
        ev.initial,
        steps,
        box_state=box,
        box_progeny=box,
        leak_tol=np.inf,
        epoch_states=pins,
    ).at_extinction()[n]
    return float(num / denom)


def lemma1_check(model: BranchingModel, a, x0, paths, n) -> dict:
    """Exact tilt invariance of the progeny-conditioned path law.

    Computes |P_{x0}(path | N=n) - Pbar_{x0}(path | Nbar=n)| for each path
    and returns the per-path values plus their maximum.
    """
    if not isinstance(a, TiltVector):
        a = TiltVector(a=np.asarray(a, dtype=float))
    tilted = associate(model, a)
    if isinstance(paths, PathEvent):
        paths = [paths]
    x0 = tuple(int(c) for c in x0)
    results = []
    for ev in paths:
        if ev.initial != x0:
            raise ModelValidationError("path initial state must match x0")
        lhs = _conditional_given_progeny(model, ev, n)
        rhs = _conditional_given_progeny(tilted, ev, n)
        results.append((ev, lhs, rhs, abs(lhs - rhs)))
    return {
        "max_discrepancy": max(r[3] for r in results) if results else 0.0,
        "rows": results,
    }


# -- scaling of the progeny pmf -------------------------------------------------


@dataclass(frozen=True)
class ProgenyScalingReport:
    x0: tuple[int, ...]
    w: np.ndarray  # conditioning direction: left eigenvector of the critical model
    rows: list  # (n, target m, n^{d/2+1} P(N = m))
    plateau: float
    sigma: np.ndarray  # aggregate covariance sum_i v_i Sigma^i
    formula_constant: float  # x0.D / (v_d (2 pi)^{d/2} sqrt(det Sigma))
    skipped: list


def _cofactor_vector(A: np.ndarray) -> np.ndarray:
    """D_i = (d, i)-th cofactor of A."""
    d = A.shape[0]
    out = np.empty(d)
    for i in range(d):
        minor = np.delete(np.delete(A, d - 1, axis=0), i, axis=1)
        det = np.linalg.det(minor) if minor.size else 1.0
        out[i] = (-1) ** ((d - 1) + i) * det
    return out


def proposition_scaling(model: BranchingModel, x0, n_range) -> ProgenyScalingReport:
    """Table of n^{d/2+1} P_{x0}(N = floor(n v)) against the limit constant."""
    sd = spectral_of(model)
    if abs(sd.rho - 1.0) > 1e-8:
        raise AssumptionError(
            f"scaling law needs a critical model (rho={sd.rho!r}); "
            "apply the criticality-restoring tilt first"
        )
    diag = validate(model)
    if not diag.aperiodic_A5:
        raise AssumptionError("offspring support is periodic: shift condition fails")
    sigma = sum(sd.v[i] * cov for i, cov in enumerate(covariance_matrices(model)))
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise AssumptionError("aggregate covariance is not positive-definite") from None
    x0 = tuple(int(c) for c in x0)
    d = model.d
    n_range = [int(n) for n in n_range]
    D = _cofactor_vector(np.eye(d) - mean_matrix(model))
    formula_constant = float(
        np.asarray(x0) @ D
        / (sd.v[-1] * (2 * math.pi) ** (d / 2) * math.sqrt(np.linalg.det(sigma)))
    )
    rows = []
    skipped = []
    if d == 1:
        reader = ProgenyPowersD1(model, max(n_range) + max(x0))
        pmf = lambda m: reader.pmf(x0[0], m[0])  # noqa: E731
    else:
        pmf = lambda m: progeny_pmf_formula(model, ProgenyQuery(x0=x0, n=m))  # noqa: E731
    for n in n_range:
        m = tuple(int(v) for v in np.floor(n * sd.v))
        if any(mi <= 0 for mi in m) or any(mi < xi for mi, xi in zip(m, x0)):
            skipped.append((n, m, "target below initial state"))
            continue
        rows.append((n, m, float(n ** (d / 2 + 1) * pmf(m))))
    if not rows:
        raise DegenerateConditionError("no evaluable points in the requested range")
    tail = rows[-max(1, len(rows) // 4):]
    plateau = float(np.mean([r[2] for r in tail]))
    return ProgenyScalingReport(
        x0=x0,
        w=sd.v,
        rows=rows,
        plateau=plateau,
        sigma=sigma,
        formula_constant=formula_constant,
        skipped=skipped,
    )


# -- the large-progeny conditioning verifier ------------------------------------


@dataclass(frozen=True)
class Theorem2Row:
    n: int
    target: tuple[int, ...]
    conditional: float
    limit: float
    gap: float


@dataclass(frozen=True)
class Theorem2Report:
    a: np.ndarray
    u_bar: np.ndarray
    v_bar: np.ndarray
    rows: list
    skipped: list


def theorem2_verify(
    model: BranchingModel,
    ev: PathEvent,
    n_range,
    a=None,
    rhs_box_cap: int = 64,
) -> Theorem2Report:
    """Gap between the N = floor(n v_bar)-conditioned path law and its limit.

    The limit is (x_j.u_bar / x0.u_bar) Pbar(path) for the critical tilted
    model; n values whose target floors below the initial state are skipped.
    """
    tilt_vec = critical_tilt(model) if a is None else (
        a if isinstance(a, TiltVector) else TiltVector(a=np.asarray(a, dtype=float))
    )
    tilted = associate(model, tilt_vec)
    sd = spectral_of(tilted)
    if abs(sd.rho - 1.0) > 1e-8:
        raise AssumptionError(f"tilt is not criticality-restoring (rho_bar={sd.rho!r})")
    diag = validate(tilted)
    if not diag.aperiodic_A5:
        raise AssumptionError("offspring support is periodic: shift condition fails")
    sigma = sum(sd.v[i] * cov for i, cov in enumerate(covariance_matrices(tilted)))
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise AssumptionError("aggregate covariance is not positive-definite") from None

    rhs_box = Box(upper=(rhs_box_cap,) * model.d)
    p_bar_path = path_probability(tilted, ev, rhs_box, leak_tol=np.inf)
    xj_u = float(np.asarray(ev.last_state, dtype=float) @ sd.u)
    x0_u = float(np.asarray(ev.initial, dtype=float) @ sd.u)
    limit = p_bar_path * xj_u / x0_u

    n_range = [int(n) for n in n_range]
    targets = {}
    skipped = []
    for n in n_range:
        m = tuple(int(v) for v in np.floor(n * sd.v))
        if any(mi <= 0 for mi in m) or any(
            mi < xi for mi, xi in zip(m, ev.initial)
        ):
            skipped.append((n, m, "target floors below initial state"))
        else:
            targets[n] = m
    if not targets:
        raise DegenerateConditionError("every requested n was skipped")
    max_m = tuple(
        max(targets[n][j] for n in targets) for j in range(model.d)
    )

    # joint law of the path event and N_{k_j}, computed once at the largest box
    pins = _path_pins(ev)
    if pins is None:
        raise DegenerateConditionError("contradictory path constraints")
    box = Box(upper=max_m)
    joint = joint_state_progeny(
        model,
        ev.initial,
        ev.last_time,
        box_state=box,
        box_progeny=box,
        leak_tol=np.inf,
        epoch_states=pins,
    )
    xj = ev.last_state
    xj_row = joint.table[box.flat_index(xj)] if box.contains(xj) else None

    if model.d == 1:
        reader = ProgenyPowersD1(model, max_m[0] + max(sum(xj), 1))
        tail_pmf = lambda y, t: reader.pmf(y[0], t[0])  # noqa: E731
        full_pmf = lambda x, m: reader.pmf(x[0], m[0])  # noqa: E731
    else:
        def tail_pmf(y, t):
            if any(c < 0 for c in t):
                return 0.0
            if sum(y) == 0:
                return 1.0 if sum(t) == 0 else 0.0
            if any(ti < yi for ti, yi in zip(t, y)):
                return 0.0
            if all(c > 0 for c in t):
                return progeny_pmf_formula(model, ProgenyQuery(x0=y, n=t))
            cap = tuple(max(1, c) for c in t)
            return progeny_pmf_dp(model, y, cap).pmf(t)

        def full_pmf(x, m):
            return progeny_pmf_formula(model, ProgenyQuery(x0=x, n=m))

    rows = []
    progeny_states = box.states()
    for n, m in sorted(targets.items()):
        denom = full_pmf(ev.initial, m)
        if denom <= 0.0:
            skipped.append((n, m, "conditioning event is null"))
            continue
        num = 0.0
        if xj_row is not None:
            for l_state, mass in zip(progeny_states, xj_row):
                if mass == 0.0:
                    continue
                t = tuple(int(mi - li + xji) for mi, li, xji in zip(m, l_state, xj))
                num += mass * tail_pmf(xj, t)
        conditional = num / denom
        rows.append(
            Theorem2Row(
                n=n, target=m, conditional=float(conditional),
                limit=float(limit), gap=float(abs(conditional - limit)),
            )
        )
    return Theorem2Report(
        a=tilt_vec.a, u_bar=sd.u, v_bar=sd.v, rows=rows, skipped=skipped
    )
