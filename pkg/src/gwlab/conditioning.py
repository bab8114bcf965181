"""Conditioned laws of the branching process.

Kernel of the process conditioned to survive far into the future, Yaglom and
Yaglom-type quasi-stationary limits, path laws conditioned on hitting a set
at a distant time, simultaneous-limit scans, and the survival-ratio
diagnostics underpinning them.

Conditionals that involve eventual extinction are priced exactly by tilting
with the extinction vector q: the event weight for a terminal state y is
q^y, so every computation reduces to the (sub)critical q-tilted model and
lattice boxes stay small in all criticality regimes.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    AssumptionError,
    DegenerateConditionError,
    ModelValidationError,
    TruncationError,
)
from .lattice import (
    Box,
    LatticeDistribution,
    LatticeKernel,
    PathEvent,
    build_kernel,
    path_probability,
)
from .model import (
    BranchingModel,
    one_minus_power,
    survival_complements,
)
from .spectral import SpectralData, spectral_of
from .tilt import CRITICAL_RHO_TOL, TiltVector, associate, extinction_vector

ROUTE_AGREEMENT_TOL = 1e-6
TV_STOP = 1e-12
CONSECUTIVE_STOPS = 5
MAX_DIST_ITERS = 200_000


# -- conditioning sets -------------------------------------------------------


class SetKind(enum.Enum):
    FINITE = "finite"
    COFINITE = "cofinite"
    NORM_EQ = "norm="
    NORM_GE = "norm>="
    NONEXTINCT = "nonextinct"


@dataclass(frozen=True)
class ConditioningSet:
    """Target set S of nonzero states, with a membership predicate.

    FINITE and NORM_EQ are finite sets; COFINITE and NORM_GE have a finite
    complement within the nonzero states, so their probabilities split into
    an exact generating-function total minus a finite lattice sum.
    """

    kind: SetKind
    states: tuple[tuple[int, ...], ...] = ()
    level: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "states", tuple(tuple(int(c) for c in s) for s in self.states)
        )
        if self.kind is SetKind.FINITE:
            if not self.states:
                raise ModelValidationError("finite conditioning set must be nonempty")
            if any(sum(s) == 0 for s in self.states):
                raise ModelValidationError("conditioning set must not contain 0")
        elif self.kind is SetKind.COFINITE:
            if any(sum(s) == 0 for s in self.states):
                raise ModelValidationError(
                    "cofinite complement lists nonzero states only"
                )
        elif self.kind in (SetKind.NORM_EQ, SetKind.NORM_GE):
            if self.level <= 0:
                raise ModelValidationError("norm level must be positive")

    def contains(self, state) -> bool:
        s = tuple(int(c) for c in state)
        if sum(s) == 0:
            return False
        if self.kind is SetKind.FINITE:
            return s in self.states
        if self.kind is SetKind.COFINITE:
            return s not in self.states
        if self.kind is SetKind.NORM_EQ:
            return sum(s) == self.level
        if self.kind is SetKind.NORM_GE:
            return sum(s) >= self.level
        return True  # NONEXTINCT

    def mask(self, box: Box) -> np.ndarray:
        states = box.states()
        norms = states.sum(axis=1)
        if self.kind is SetKind.FINITE:
            member = np.array([tuple(s) in set(self.states) for s in map(tuple, states)])
        elif self.kind is SetKind.COFINITE:
            excluded = set(self.states)
            member = np.array([tuple(s) not in excluded for s in map(tuple, states)])
        elif self.kind is SetKind.NORM_EQ:
            member = norms == self.level
        elif self.kind is SetKind.NORM_GE:
            member = norms >= self.level
        else:
            member = np.ones(len(states), dtype=bool)
        member &= norms > 0
        return member

    def complement_mask(self, box: Box) -> np.ndarray:
        """Nonzero box states outside S (finite for the cofinite kinds)."""
        states = box.states()
        norms = states.sum(axis=1)
        return (~self.mask(box)) & (norms > 0)

    @property
    def has_finite_complement(self) -> bool:
        return self.kind in (SetKind.COFINITE, SetKind.NORM_GE, SetKind.NONEXTINCT)

    def describe(self) -> str:
        if self.kind is SetKind.FINITE:
            return "finite:[" + ",".join(str(s) for s in self.states) + "]"
        if self.kind is SetKind.COFINITE:
            return "cofinite:[" + ",".join(str(s) for s in self.states) + "]"
        if self.kind is SetKind.NORM_EQ:
            return f"norm={self.level}"
        if self.kind is SetKind.NORM_GE:
            return f"norm>={self.level}"
        return "nonextinct"


def parse_set_spec(spec: str, d: int) -> ConditioningSet:
    """Parse the CLI mini-language: finite:[(1,1),(2,0)], norm>=3, nonextinct."""
    text = spec.strip().lower().replace(" ", "")
    if text == "nonextinct":
        return ConditioningSet(kind=SetKind.NONEXTINCT)
    if text.startswith("norm>="):
        return ConditioningSet(kind=SetKind.NORM_GE, level=int(text[6:]))
    if text.startswith("norm="):
        return ConditioningSet(kind=SetKind.NORM_EQ, level=int(text[5:]))
    for prefix, kind in (("finite:", SetKind.FINITE), ("cofinite:", SetKind.COFINITE)):
        if text.startswith(prefix):
            body = text[len(prefix):]
            if not (body.startswith("[") and body.endswith("]")):
                raise ModelValidationError(f"bad set spec {spec!r}")
            states = _parse_state_list(body[1:-1], d)
            return ConditioningSet(kind=kind, states=tuple(states))
    raise ModelValidationError(f"unrecognized set spec {spec!r}")


def _parse_state_list(body: str, d: int):
    states = []
    if not body:
        return states
    if body.startswith("("):
        chunks = body.replace("),(", ");(").split(";")
        for chunk in chunks:
            nums = chunk.strip("()").split(",")
            states.append(tuple(int(v) for v in nums))
    else:
        states = [(int(v),) for v in body.split(",")]
    for s in states:
        if len(s) != d:
            raise ModelValidationError(f"state {s} has dimension != {d}")
    return states


def accessibility_check(
    model: BranchingModel, S: ConditioningSet, box: Box, kernel: LatticeKernel | None = None
):
    """Reverse reachability of S on the truncated kernel.

    Returns (all_reach, unreachable_states); the caller warns rather than
    fails, since states near the box boundary may only reach S outside it.
    """
    if kernel is None:
        kernel = build_kernel(model, box)
    adjacency = kernel.matrix > 0
    reach = S.mask(box).copy()
    diameter = sum(box.upper)
    for _ in range(2 * diameter):
        grown = reach | (adjacency @ reach)
        if np.array_equal(grown, reach):
            break
        reach = grown
    states = box.states()
    nonzero = states.sum(axis=1) > 0
    # membership itself counts as reachable at lag 0
    bad = nonzero & ~reach
    unreachable = [tuple(int(c) for c in s) for s in states[bad]]
    return not unreachable, unreachable


# -- Q-process kernel --------------------------------------------------------


@dataclass(frozen=True)
class QKernel:
    """Transition kernel of the process conditioned to survive forever.

    Entries Q(x, y) = (y.u_bar / x.u_bar) * Pbar(x, y) / rho_bar on the
    nonzero box states, where Pbar is the one-step kernel of the tilted
    model and (rho_bar, u_bar) its spectral data.
    """

    base: BranchingModel
    a: np.ndarray
    rho_bar: float
    u_bar: np.ndarray
    box: Box
    matrix: np.ndarray
    row_defect_bound: np.ndarray

    def row(self, x) -> np.ndarray:
        return self.matrix[self.box.flat_index(x)].reshape(self.box.shape)

    def entry(self, x, y) -> float:
        return float(self.matrix[self.box.flat_index(x), self.box.flat_index(y)])


def q_kernel(
    model: BranchingModel,
    a,
    box: Box,
    row_sum_tol: float = 1e-8,
) -> QKernel:
    if not isinstance(a, TiltVector):
        a = TiltVector(a=np.asarray(a, dtype=float))
    tilted = associate(model, a)
    sd = spectral_of(tilted)
    kernel = build_kernel(tilted, box)
    states = box.states().astype(float)
    weights = states @ sd.u  # x.u_bar per flat state
    Q = np.zeros_like(kernel.matrix)
    nz = states.sum(axis=1) > 0
    Q[np.ix_(nz, nz)] = (
        kernel.matrix[np.ix_(nz, nz)]
        * weights[None, nz]
        / weights[nz, None]
        / sd.rho
    )
    # mass escaping the box carries weight at most u_max * ||x||_1 * max total
    # offspring per parent, which bounds each row's deficit
    max_brood = max(int(law.atoms.sum(axis=1).max()) for law in tilted.laws)
    norms = states.sum(axis=1)
    bound = np.zeros(box.size)
    bound[nz] = (
        kernel.leak[nz] * sd.u.max() * norms[nz] * max_brood / (sd.rho * weights[nz])
    )
    row_sums = Q[nz].sum(axis=1)
    defect = np.abs(row_sums - 1.0)
    if np.any(defect > row_sum_tol + bound[nz]):
        worst = int(np.argmax(defect - bound[nz]))
        raise TruncationError(
            f"Q-kernel row sum off by {defect[worst]:.3e} beyond overflow bound; "
            f"enlarge the box (caps {box.upper})"
        )
    return QKernel(
        base=tilted,
        a=a.a,
        rho_bar=sd.rho,
        u_bar=sd.u,
        box=box,
        matrix=Q,
        row_defect_bound=bound,
    )


# -- Yaglom limits -----------------------------------------------------------


@dataclass(frozen=True)
class YaglomData:
    """Quasi-stationary data of a subcritical model on a truncated box."""

    nu: LatticeDistribution
    gamma: float
    g_grad_at_1: np.ndarray
    mu_bar: LatticeDistribution
    pi: np.ndarray  # nu / (1 - rho), the sigma-finite limit measure
    rho_box: float  # decay rate of the box-restricted kernel
    route_tv_gap: float
    leak_per_step: float  # one-step escape of nu, slack for eigen identities


def _left_eigvec(R: np.ndarray):
    w = np.ones(R.shape[0])
    w /= w.sum()
    lam = 0.0
    for _ in range(MAX_DIST_ITERS):
        nxt = w @ R
        lam = nxt.sum()
        if lam <= 0:
            raise DegenerateConditionError("restricted kernel lost all mass")
        nxt /= lam
        if np.abs(nxt - w).sum() < 1e-14:
            return nxt, lam
        w = nxt
    return w, lam


def yaglom(
    model: BranchingModel,
    box: Box,
    x0=None,
    kernel: LatticeKernel | None = None,
    spectral: SpectralData | None = None,
) -> YaglomData:
    """Yaglom distribution via two independent routes, cross-checked.

    Route one iterates the law of X_k conditioned on being alive and inside
    the box; route two takes the dominant left eigenvector of the kernel
    restricted to the nonzero states.  Disagreement beyond 1e-6 in total
    variation means the box is too small.
    """
    sd = spectral if spectral is not None else spectral_of(model)
    if sd.rho >= 1.0:
        raise AssumptionError(f"Yaglom limit needs a subcritical model (rho={sd.rho!r})")
    if kernel is None:
        kernel = build_kernel(model, box)
    if x0 is None:
        x0 = (1,) + (0,) * (model.d - 1)

    # route two: left Perron vector of the restricted kernel
    nu_eig, rho_box = _left_eigvec(kernel.restricted())

    # route one: conditional law iteration from x0
    vec = np.zeros(box.size)
    vec[box.flat_index(tuple(int(c) for c in x0))] = 1.0
    prev = None
    for _ in range(MAX_DIST_ITERS):
        vec = vec @ kernel.matrix
        alive = vec[1:].sum()
        if alive <= 0:
            raise DegenerateConditionError("no surviving mass in box")
        cond = vec[1:] / alive
        if prev is not None and np.abs(cond - prev).sum() < TV_STOP:
            break
        prev = cond
        if alive < 1e-280:  # rescale to dodge underflow; conditioning is scale-free
            vec /= alive
    nu_iter = cond

    gap = 0.5 * float(np.abs(nu_iter - nu_eig).sum())
    if gap > ROUTE_AGREEMENT_TOL:
        raise TruncationError(
            f"Yaglom routes disagree by TV {gap:.3e}; enlarge the box {box.upper}"
        )

    nu_flat = np.zeros(box.size)
    nu_flat[1:] = nu_eig
    nu = LatticeDistribution(box=box, mass=nu_flat.reshape(box.shape), overflow=0.0)

    gamma = _gamma_limit(model, sd, x0)

    # first moments of nu by central finite differences of its pgf at 1
    states = box.states().astype(float)
    h = 1e-5
    grad = np.empty(model.d)
    for i in range(model.d):
        rp = np.ones(model.d)
        rp[i] = 1.0 + h
        rm = np.ones(model.d)
        rm[i] = 1.0 - h
        gp = nu_flat @ np.prod(rp[None, :] ** states, axis=1)
        gm = nu_flat @ np.prod(rm[None, :] ** states, axis=1)
        grad[i] = (gp - gm) / (2 * h)

    biased = nu_flat * (states @ sd.u)
    biased /= biased.sum()
    mu_bar = LatticeDistribution(box=box, mass=biased.reshape(box.shape), overflow=0.0)

    leak_step = float(nu_flat @ kernel.leak)
    return YaglomData(
        nu=nu,
        gamma=gamma,
        g_grad_at_1=grad,
        mu_bar=mu_bar,
        pi=nu.mass / (1.0 - sd.rho),
        rho_box=float(rho_box),
        route_tv_gap=gap,
        leak_per_step=leak_step,
    )


def _gamma_limit(model: BranchingModel, sd: SpectralData, x0, tol=1e-13) -> float:
    """Stabilized value of rho^-k P_x(X_k != 0) / (x.u), exact via iterates."""
    x = np.asarray(x0, dtype=float)
    xu = float(x @ sd.u)
    eps = np.ones(model.d)
    log_rho = np.log(sd.rho)
    gamma_prev = None
    from .model import _one_minus_f_at_one_minus

    for k in range(1, MAX_DIST_ITERS):
        eps = _one_minus_f_at_one_minus(model, eps)
        surv = one_minus_power(eps, x)
        if surv <= 0.0:
            break
        gamma = float(np.exp(np.log(surv) - k * log_rho) / xu)
        if gamma_prev is not None and abs(gamma - gamma_prev) <= tol * max(gamma, 1e-12):
            return gamma
        gamma_prev = gamma
    if gamma_prev is None:
        raise DegenerateConditionError("survival probability vanished immediately")
    return gamma_prev


def yaglom_type(
    model: BranchingModel,
    n: int,
    box: Box,
    x0=None,
    kernel: LatticeKernel | None = None,
) -> LatticeDistribution:
    """Limit over k of the law of X_k given survival at lag n and extinction.

    Reduces to the q-tilted model, then iterates the measure with terminal
    weights 1 - fbar_n(0)^z until the total-variation change stays below
    1e-12 for five consecutive steps.
    """
    sd = spectral_of(model)
    if abs(sd.rho - 1.0) <= CRITICAL_RHO_TOL:
        raise AssumptionError("Yaglom-type limit needs a noncritical model")
    q = extinction_vector(model).q
    tilted = associate(model, q) if sd.rho > 1.0 else model
    if kernel is None or kernel.model is not tilted:
        kernel = build_kernel(tilted, box)
    if x0 is None:
        x0 = (1,) + (0,) * (model.d - 1)
    eps_n = survival_complements(tilted, n)[n]
    states = box.states()
    wts = np.array([one_minus_power(eps_n, s) for s in states])
    if not np.any(wts > 0):
        raise DegenerateConditionError(f"terminal weights vanished at lag {n}")
    vec = np.zeros(box.size)
    vec[box.flat_index(tuple(int(c) for c in x0))] = 1.0
    prev = None
    stable = 0
    for _ in range(MAX_DIST_ITERS):
        vec = vec @ kernel.matrix
        weighted = vec * wts
        total = weighted.sum()
        if total <= 0:
            raise DegenerateConditionError("weighted mass vanished in box")
        cond = weighted / total
        if prev is not None and np.abs(cond - prev).sum() < TV_STOP:
            stable += 1
            if stable >= CONSECUTIVE_STOPS:
                break
        else:
            stable = 0
        prev = cond
        if total < 1e-280:
            vec /= vec.sum()
    return LatticeDistribution(box=box, mass=cond.reshape(box.shape), overflow=0.0)


# -- conditioning on reaching a set ------------------------------------------


def _tilted_set_probability(
    tilted: BranchingModel,
    S: ConditioningSet,
    start,
    m: int,
    box: Box,
    kernel: LatticeKernel,
    eps_rows: np.ndarray,
) -> float:
    """Pbar_start(Xbar_m in S), exact GF total minus/plus finite lattice sums."""
    if S.kind is SetKind.NONEXTINCT:
        return one_minus_power(eps_rows[m], start)
    vec = np.zeros(box.size)
    vec[box.flat_index(tuple(int(c) for c in start))] = 1.0
    for _ in range(m):
        vec = vec @ kernel.matrix
    if S.has_finite_complement:
        total = one_minus_power(eps_rows[m], start)
        comp = float(vec[S.complement_mask(box)].sum())
        return max(total - comp, 0.0)
    return float(vec[S.mask(box)].sum())


def conditional_path_law(
    model: BranchingModel,
    ev: PathEvent,
    S: ConditioningSet,
    n: int,
    box: Box,
    path_box: Box | None = None,
    check_accessibility: bool = True,
) -> float:
    """P_{x0}(path | X_{k_j + n} in S, T < infinity), exactly.

    The extinction requirement prices terminal states y with q^y, which
    turns both the numerator and denominator into set probabilities of the
    q-tilted model; the path factor stays on the original model.
    """
    q = extinction_vector(model).q
    tilted = associate(model, q)
    kernel = build_kernel(tilted, box)
    if check_accessibility and S.kind in (SetKind.FINITE, SetKind.NORM_EQ):
        ok, unreachable = accessibility_check(tilted, S, box, kernel=kernel)
        if not ok:
            warnings.warn(
                f"conditioning set {S.describe()} not reachable within the box "
                f"from {len(unreachable)} states; results may be degenerate",
                stacklevel=2,
            )
    pb = path_box if path_box is not None else box
    p_path = path_probability(model, ev, pb, leak_tol=np.inf)
    kj = ev.last_time
    xj = ev.last_state
    x0 = ev.initial
    eps_rows = survival_complements(tilted, kj + n)
    den = float(np.prod(q ** np.asarray(x0))) * _tilted_set_probability(
        tilted, S, x0, kj + n, box, kernel, eps_rows
    )
    if den <= 0.0:
        raise DegenerateConditionError(
            f"conditioning event {S.describe()} at lag {kj + n} has zero "
            "retained probability"
        )
    if sum(xj) == 0:
        return 0.0
    num = (
        p_path
        * float(np.prod(q ** np.asarray(xj)))
        * _tilted_set_probability(tilted, S, xj, n, box, kernel, eps_rows)
    )
    return num / den


def q_process_rhs(
    model: BranchingModel,
    a,
    ev: PathEvent,
    box: Box,
) -> float:
    """Limit value (1/rho_bar^{k_j}) (x_j.u_bar / x0.u_bar) Pbar(path)."""
    if not isinstance(a, TiltVector):
        a = TiltVector(a=np.asarray(a, dtype=float))
    tilted = associate(model, a)
    sd = spectral_of(tilted)
    p_path = path_probability(tilted, ev, box, leak_tol=np.inf)
    xj_u = float(np.asarray(ev.last_state, dtype=float) @ sd.u)
    x0_u = float(np.asarray(ev.initial, dtype=float) @ sd.u)
    return p_path * xj_u / (x0_u * sd.rho ** ev.last_time)


# -- simultaneous limits -----------------------------------------------------


@dataclass(frozen=True)
class DoubleLimitRow:
    k: int
    n: int
    value_at_z: float
    gap_at_z: float
    tv_to_mu_bar: float


def double_limit_scan(
    model: BranchingModel,
    z,
    schedule,
    box: Box,
    x0=None,
) -> list[DoubleLimitRow]:
    """Gap table for the law of X_k given survival at lag n and extinction.

    The schedule is an iterable of (k, n) pairs; entries are processed in
    increasing k so the distribution iterates are shared.
    """
    sd = spectral_of(model)
    if abs(sd.rho - 1.0) <= CRITICAL_RHO_TOL:
        raise AssumptionError(
            "simultaneous limit is degenerate for critical models; "
            "noncritical input required"
        )
    q = extinction_vector(model).q
    tilted = associate(model, q) if sd.rho > 1.0 else model
    if x0 is None:
        x0 = (1,) + (0,) * (model.d - 1)
    x0 = tuple(int(c) for c in x0)
    z = tuple(int(c) for c in z)
    if not box.contains(z):
        raise ModelValidationError(f"state {z} outside box {box.upper}")
    kernel = build_kernel(tilted, box)
    yg = yaglom(tilted, box, x0=x0, kernel=kernel)
    mu_flat = yg.mu_bar.mass.reshape(-1)
    schedule = sorted((int(k), int(n)) for k, n in schedule)
    kmax = max(k for k, _ in schedule)
    nmax = max(k + n for k, n in schedule)
    eps_rows = survival_complements(tilted, nmax)
    states = box.states()
    z_flat = box.flat_index(z)

    rows = []
    vec = np.zeros(box.size)
    vec[box.flat_index(x0)] = 1.0
    step = 0
    for k, n in schedule:
        while step < k:
            vec = vec @ kernel.matrix
            step += 1
        wts = np.array([one_minus_power(eps_rows[n], s) for s in states])
        den = one_minus_power(eps_rows[k + n], x0)
        cond = vec * wts / den
        tv = 0.5 * (np.abs(cond - mu_flat).sum() + abs(1.0 - cond.sum()))
        rows.append(
            DoubleLimitRow(
                k=k,
                n=n,
                value_at_z=float(cond[z_flat]),
                gap_at_z=float(abs(cond[z_flat] - mu_flat[z_flat])),
                tv_to_mu_bar=float(tv),
            )
        )
    return rows


def diagonal_schedule(m_max: int):
    return [(m, m) for m in range(1, m_max + 1)]


def fraction_schedule(t: float, m_max: int):
    """Observation time floor(m t) with lag m - floor(m t), m up to m_max."""
    if not 0.0 < t < 1.0:
        raise ModelValidationError("fraction t must lie in (0, 1)")
    out = []
    for m in range(1, m_max + 1):
        k = int(np.floor(m * t))
        n = m - k
        if k >= 1 and n >= 1:
            out.append((k, n))
    return out


# -- ratio diagnostics for rho <= 1 -------------------------------------------


@dataclass(frozen=True)
class SurvivalRatioRow:
    n: int
    increment_ratio: float  # v-weighted successive increments of f_n(0); -> rho
    difference_ratio: float  # normalized difference quotient; -> x.u
    survival_ratio: float  # (1 - f_{n+1}(0)^x) / (1 - f_n(0)^x); -> rho
    pi_empirical: dict
    pi_reference: dict


def survival_ratio_diagnostics(
    model: BranchingModel,
    n_max: int,
    x=None,
    ys=(),
    b=0.0,
    c=0.5,
    box: Box | None = None,
) -> list[SurvivalRatioRow]:
    """Convergence diagnostics of the survival-ratio limits for rho <= 1.

    Tracks, versus n: the v-weighted ratio of successive increments of
    f_n(0); the normalized difference ratio between two evaluation points;
    the survival ratio; and the empirical quasi-stationary measure
    P_n(x, y) / (f_{n+1}(0)^x - f_n(0)^x), compared against nu/(1-rho)
    whenever the model is strictly subcritical.
    """
    sd = spectral_of(model)
    if sd.rho > 1.0 + CRITICAL_RHO_TOL:
        raise AssumptionError("ratio diagnostics require rho <= 1")
    if x is None:
        x = (1,) + (0,) * (model.d - 1)
    x = np.asarray(x, dtype=float)
    eps0 = survival_complements(model, n_max + 2)
    epsb = survival_complements(model, n_max + 2, eps0=np.full(model.d, 1.0 - b))
    epsc = survival_complements(model, n_max + 2, eps0=np.full(model.d, 1.0 - c))

    ys = [tuple(int(v) for v in y) for y in ys]
    pi_ref = {}
    kernel = None
    vec = None
    if box is not None:
        kernel = build_kernel(model, box)
        vec = np.zeros(box.size)
        vec[box.flat_index(tuple(int(v) for v in x.astype(int)))] = 1.0
        if sd.rho < 1.0 and ys:
            yg = yaglom(model, box, kernel=kernel, spectral=sd)
            pi_ref = {y: yg.nu.mass_at(y) / (1.0 - sd.rho) for y in ys}

    rows = []
    for n in range(n_max + 1):
        inc_num = float(sd.v @ (eps0[n + 1] - eps0[n + 2]))
        inc_den = float(sd.v @ (eps0[n] - eps0[n + 1]))
        s_n = one_minus_power(eps0[n], x)
        s_n1 = one_minus_power(eps0[n + 1], x)
        diff_num = one_minus_power(epsb[n], x) - one_minus_power(epsc[n], x)
        diff_den = float(sd.v @ (epsb[n] - epsc[n]))
        pi_emp = {}
        if vec is not None and ys:
            denom = s_n - s_n1
            for y in ys:
                pi_emp[y] = float(vec[box.flat_index(y)] / denom) if denom > 0 else np.nan
        rows.append(
            SurvivalRatioRow(
                n=n,
                increment_ratio=inc_num / inc_den if inc_den > 0 else np.nan,
                difference_ratio=diff_num / diff_den if diff_den != 0 else np.nan,
                survival_ratio=s_n1 / s_n if s_n > 0 else np.nan,
                pi_empirical=pi_emp,
                pi_reference=pi_ref,
            )
        )
        if vec is not None:
            vec = vec @ kernel.matrix
    return rows
