"""Exact distributions and kernels on a truncated integer lattice.

Mass that leaves the box is absorbed into a single overflow account and can
never return, so every retained point mass is an exact lower bound on the
untruncated value (exact whenever overflow is zero).  Offspring vectors are
nonnegative, which makes the truncated convolutions lossless for retained
entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ModelValidationError, TruncationError
from .model import BranchingModel

DEFAULT_LEAK_TOL = 1e-9


@dataclass(frozen=True)
class Box:
    """Per-coordinate caps; the box is the integer rectangle [0, upper]."""

    upper: tuple[int, ...]

    def __post_init__(self):
        if not self.upper or any(c < 1 for c in self.upper):
            raise ModelValidationError("box caps must all be >= 1")
        object.__setattr__(self, "upper", tuple(int(c) for c in self.upper))

    @property
    def d(self) -> int:
        return len(self.upper)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c + 1 for c in self.upper)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def contains(self, state) -> bool:
        return len(state) == self.d and all(
            0 <= int(s) <= c for s, c in zip(state, self.upper)
        )

    def states(self) -> np.ndarray:
        """All states in C order (matches flat indexing of box-shaped arrays)."""
        grids = np.indices(self.shape).reshape(self.d, -1).T
        return grids

    def flat_index(self, state) -> int:
        return int(np.ravel_multi_index(tuple(int(s) for s in state), self.shape))


@dataclass(frozen=True)
class LatticeDistribution:
    """Probability mass on a box plus the mass that escaped above it."""

    box: Box
    mass: np.ndarray  # dense, shape == box.shape
    overflow: float

    def mass_at(self, state) -> float:
        if not self.box.contains(state):
            raise ModelValidationError(f"state {state} outside box {self.box.upper}")
        return float(self.mass[tuple(int(s) for s in state)])

    def retained(self) -> float:
        return float(self.mass.sum())

    def rows(self):
        """(state, mass) pairs for every lattice point with positive mass."""
        flat = self.mass.reshape(-1)
        for state, value in zip(self.box.states(), flat):
            if value != 0.0:
                yield tuple(int(c) for c in state), float(value)


@dataclass(frozen=True)
class SignedLatticeMeasure:
    """Signed values on a box; scratch type for the progeny determinant."""

    box: Box
    values: np.ndarray
    overflow_abs: float = 0.0


@dataclass(frozen=True)
class PathEvent:
    """Finitely many epoch constraints X_{k_1}=x_1, ..., X_{k_j}=x_j."""

    initial: tuple[int, ...]
    times: tuple[int, ...]
    states: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "initial", tuple(int(c) for c in self.initial))
        object.__setattr__(self, "times", tuple(int(t) for t in self.times))
        object.__setattr__(
            self, "states", tuple(tuple(int(c) for c in s) for s in self.states)
        )
        if len(self.times) != len(self.states) or not self.times:
            raise ModelValidationError("path needs matching, nonempty times/states")
        if any(t < 0 for t in self.times):
            raise ModelValidationError("path times must be nonnegative")
        if any(a > b for a, b in zip(self.times, self.times[1:])):
            raise ModelValidationError("path times must be nondecreasing")
        if sum(self.initial) == 0:
            raise ModelValidationError("initial state must be nonzero")

    @property
    def last_time(self) -> int:
        return self.times[-1]

    @property
    def last_state(self) -> tuple[int, ...]:
        return self.states[-1]


# -- convolution primitives --------------------------------------------------


def _law_shift_add(arr: np.ndarray, law, shape) -> tuple[np.ndarray, float]:
    """Convolve a box-shaped array with one offspring law; report the leak."""
    out = np.zeros(shape)
    leak = 0.0
    total = arr.sum()
    d = len(shape)
    for k, p in zip(law.atoms, law.probs):
        src = arr[tuple(slice(0, shape[j] - int(k[j])) for j in range(d))]
        out[tuple(slice(int(k[j]), shape[j]) for j in range(d))] += p * src
        leak += p * (total - src.sum())
    return out, leak


@dataclass(frozen=True)
class LatticeKernel:
    """Dense one-step kernel on a box with an absorbing overflow column."""

    model: BranchingModel
    box: Box
    matrix: np.ndarray  # (S, S); row = from-state, flat C order
    leak: np.ndarray  # (S,)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def restricted(self) -> np.ndarray:
        """Sub-stochastic kernel on box minus the absorbing zero state."""
        return self.matrix[1:, 1:]


def build_kernel(model: BranchingModel, box: Box) -> LatticeKernel:
    """One-step transition kernel for every state of the box.

    Rows are built incrementally: the law of X_1 from x is the law from
    x - e_j convolved with one more type-j offspring draw, so a single pass
    in lexicographic state order fills the whole table.
    """
    if box.d != model.d:
        raise ModelValidationError("box dimension != model dimension")
    shape = box.shape
    S = box.size
    matrix = np.zeros((S, S))
    leak = np.zeros(S)
    rows = np.zeros((S,) + shape)
    base = np.zeros(shape)
    base[(0,) * box.d] = 1.0
    rows[0] = base
    states = box.states()
    for idx in range(1, S):
        x = states[idx]
        j = int(np.argmax(x > 0))
        prev = np.array(x)
        prev[j] -= 1
        pidx = box.flat_index(prev)
        rows[idx], extra = _law_shift_add(rows[pidx], model.laws[j], shape)
        leak[idx] = leak[pidx] + extra
    matrix[:] = rows.reshape(S, S)
    return LatticeKernel(model=model, box=box, matrix=matrix, leak=leak)


# -- public operations -------------------------------------------------------


def one_step(model: BranchingModel, x, box: Box) -> LatticeDistribution:
    """Law of X_1 from x: the ||x||_1-fold offspring convolution."""
    x = tuple(int(c) for c in x)
    if not box.contains(x):
        raise ModelValidationError(f"state {x} outside box {box.upper}")
    shape = box.shape
    arr = np.zeros(shape)
    arr[(0,) * box.d] = 1.0
    leak = 0.0
    for i, count in enumerate(x):
        for _ in range(count):
            arr, extra = _law_shift_add(arr, model.laws[i], shape)
            leak += extra
    return LatticeDistribution(box=box, mass=arr, overflow=leak)


def n_step(
    model: BranchingModel,
    x,
    n: int,
    box: Box,
    leak_tol: float = DEFAULT_LEAK_TOL,
    kernel: LatticeKernel | None = None,
) -> LatticeDistribution:
    """Law of X_n from x with overflow absorbing."""
    x = tuple(int(c) for c in x)
    if not box.contains(x):
        raise ModelValidationError(f"state {x} outside box {box.upper}")
    if kernel is None:
        kernel = build_kernel(model, box)
    vec = np.zeros(box.size)
    vec[box.flat_index(x)] = 1.0
    overflow = 0.0
    for _ in range(n):
        overflow += float(vec @ kernel.leak)
        vec = vec @ kernel.matrix
    if overflow > leak_tol:
        raise TruncationError(
            f"overflow {overflow:.3e} exceeds leak tolerance {leak_tol:.3e}; "
            f"enlarge the box (caps {box.upper})"
        )
    return LatticeDistribution(box=box, mass=vec.reshape(box.shape), overflow=overflow)


def path_probability(
    model: BranchingModel,
    ev: PathEvent,
    box: Box,
    leak_tol: float = DEFAULT_LEAK_TOL,
    kernel: LatticeKernel | None = None,
) -> float:
    """P_{x_0}(X_{k_1}=x_1, ..., X_{k_j}=x_j) via the Markov property."""
    for s in (ev.initial, *ev.states):
        if not box.contains(s):
            raise ModelValidationError(f"path state {s} outside box {box.upper}")
    if kernel is None:
        kernel = build_kernel(model, box)
    prob = 1.0
    current = ev.initial
    prev_time = 0
    for t, s in zip(ev.times, ev.states):
        gap = t - prev_time
        if gap == 0:
            if s != current:
                return 0.0
        else:
            dist = n_step(model, current, gap, box, leak_tol=leak_tol, kernel=kernel)
            prob *= dist.mass_at(s)
        current, prev_time = s, t
        if prob == 0.0:
            return 0.0
    return prob


@dataclass(frozen=True)
class JointStateProgeny:
    """Joint law of (X_k, N_k) with per-component overflow accounts."""

    state_box: Box
    progeny_box: Box
    table: np.ndarray  # (state_size, progeny_size), flat C order on both axes
    overflow_state: float
    overflow_progeny: float

    def mass_at(self, state, progeny) -> float:
        return float(
            self.table[
                self.state_box.flat_index(state), self.progeny_box.flat_index(progeny)
            ]
        )

    def progeny_marginal(self) -> LatticeDistribution:
        flat = self.table.sum(axis=0)
        return LatticeDistribution(
            box=self.progeny_box,
            mass=flat.reshape(self.progeny_box.shape),
            overflow=self.overflow_state + self.overflow_progeny,
        )

    def state_marginal(self) -> LatticeDistribution:
        flat = self.table.sum(axis=1)
        return LatticeDistribution(
            box=self.state_box,
            mass=flat.reshape(self.state_box.shape),
            overflow=self.overflow_state + self.overflow_progeny,
        )

    def at_extinction(self) -> np.ndarray:
        """Progeny table restricted to the absorbed state 0."""
        return self.table[0].reshape(self.progeny_box.shape).copy()


def _progeny_shift(row: np.ndarray, shift: np.ndarray, shape) -> tuple[np.ndarray, float]:
    arr = row.reshape(shape)
    out = np.zeros(shape)
    d = len(shape)
    src = arr[tuple(slice(0, shape[j] - int(shift[j])) for j in range(d))]
    out[tuple(slice(int(shift[j]), shape[j]) for j in range(d))] = src
    return out.reshape(-1), float(arr.sum() - src.sum())


def joint_step(
    joint: np.ndarray, kernel: LatticeKernel, progeny_box: Box
) -> tuple[np.ndarray, float, float]:
    """One forward step of the (state, accumulated progeny) DP."""
    leaked_state = float(kernel.leak @ joint.sum(axis=1))
    mixed = kernel.matrix.T @ joint
    out = np.empty_like(mixed)
    leaked_progeny = 0.0
    pshape = progeny_box.shape
    for sidx, xs in enumerate(kernel.box.states()):
        out[sidx], extra = _progeny_shift(mixed[sidx], xs, pshape)
        leaked_progeny += extra
    return out, leaked_state, leaked_progeny


def joint_state_progeny(
    model: BranchingModel,
    x0,
    k: int,
    box_state: Box,
    box_progeny: Box,
    leak_tol: float = DEFAULT_LEAK_TOL,
    kernel: LatticeKernel | None = None,
    epoch_states: dict[int, tuple[int, ...]] | None = None,
) -> JointStateProgeny:
    """Joint law of (X_k, N_k) from x0, with N_0 = x0.

    ``epoch_states`` optionally pins the state at given intermediate times
    (mass elsewhere is dropped), turning the result into the joint law of the
    path event and the accumulated progeny.
    """
    x0 = tuple(int(c) for c in x0)
    if not box_state.contains(x0):
        raise ModelValidationError(f"x0 {x0} outside state box {box_state.upper}")
    if not box_progeny.contains(x0):
        raise ModelValidationError(f"x0 {x0} outside progeny box {box_progeny.upper}")
    if kernel is None:
        kernel = build_kernel(model, box_state)
    epoch_states = epoch_states or {}
    joint = np.zeros((box_state.size, box_progeny.size))
    joint[box_state.flat_index(x0), box_progeny.flat_index(x0)] = 1.0
    ov_state = 0.0
    ov_progeny = 0.0

    def apply_pin(t):
        pin = epoch_states.get(t)
        if pin is not None:
            keep = box_state.flat_index(pin)
            mask = np.zeros(box_state.size, dtype=bool)
            mask[keep] = True
            joint[~mask, :] = 0.0

    apply_pin(0)
    for t in range(1, k + 1):
        joint, ls, lp = joint_step(joint, kernel, box_progeny)
        ov_state += ls
        ov_progeny += lp
        apply_pin(t)
    if ov_state + ov_progeny > leak_tol:
        raise TruncationError(
            f"joint overflow state={ov_state:.3e} progeny={ov_progeny:.3e} "
            f"exceeds {leak_tol:.3e}; enlarge boxes"
        )
    return JointStateProgeny(
        state_box=box_state,
        progeny_box=box_progeny,
        table=joint,
        overflow_state=ov_state,
        overflow_progeny=ov_progeny,
    )


def default_box(model: BranchingModel, cap: int) -> Box:
    """Cubic box with the same cap in every coordinate."""
    return Box(upper=(int(cap),) * model.d)
