"""Simulation oracle: unconditioned trajectories and rejection-based
conditioned estimates that cross-check the exact pipelines.

Every replicate draws from its own counter-based stream keyed by
(seed, replicate index), so results are bit-identical for a fixed seed no
matter how replicates are scheduled or how many workers run them.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConditionError, ModelValidationError
from .conditioning import ConditioningSet
from .lattice import PathEvent
from .model import BranchingModel
from .tilt import extinction_vector


@dataclass(frozen=True)
class SimConfig:
    seed: int
    replicates: int
    horizon: int
    pop_cap: int = 10_000
    progeny_cap: int = 1_000_000

    def __post_init__(self):
        if self.replicates < 1:
            raise ModelValidationError("replicates must be >= 1")
        if self.horizon < 1:
            raise ModelValidationError("horizon must be >= 1")


@dataclass(frozen=True)
class EstimateWithError:
    estimate: float
    std_error: float
    n_effective: int
    censored: int = 0


@dataclass
class SimulationResult:
    states: np.ndarray  # (replicates, horizon + 1, d)
    progeny: np.ndarray  # (replicates, d)
    extinct: np.ndarray  # bool: reached 0 within the horizon
    extinct_time: np.ndarray  # generation of extinction, or -1
    censored: np.ndarray  # bool: a cap aborted the replicate
    config: SimConfig | None = field(repr=False, default=None)


def _substream_seeker(seed: int):
    """Counter-based per-replicate substreams on one Philox instance.

    Replicate r's stream is the keyed Philox counter block with word 2 set
    to r, so every replicate owns a disjoint 2^128-draw range and can be
    replayed independently of scheduling.  Returns seek(rep) -> Generator;
    each worker thread must hold its own seeker.
    """
    bg = np.random.Philox(key=np.array([seed & (2**64 - 1), 0], dtype=np.uint64))
    gen = np.random.Generator(bg)
    template = bg.state

    def seek(rep: int) -> np.random.Generator:
        template["state"]["counter"][:] = 0
        template["state"]["counter"][2] = rep
        template["buffer_pos"] = 4
        template["has_uint32"] = 0
        template["uinteger"] = 0
        bg.state = template
        return gen

    return seek


def _rng_for(seed: int, rep: int) -> np.random.Generator:
    """One-off generator for replicate rep (slower than a reused seeker)."""
    return _substream_seeker(seed)(rep)


def _step_population(state, samplers, rng):
    new = None
    for i, sampler in enumerate(samplers):
        count = int(state[i])
        if count:
            contrib = sampler(count, rng)
            new = contrib if new is None else new + contrib
    return np.zeros_like(state) if new is None else new


def _law_arrays(model: BranchingModel):
    """Per-type offspring samplers: count, rng -> summed offspring vector."""
    out = []
    for law in model.laws:
        atoms = law.atoms
        probs = law.probs
        if len(probs) == 1:
            k0 = atoms[0].copy()
            out.append(lambda c, rng, k0=k0: c * k0)
        elif len(probs) == 2:
            p1 = float(probs[1])
            k0 = atoms[0].copy()
            k1 = atoms[1].copy()

            def two_point(c, rng, p1=p1, k0=k0, k1=k1):
                b = rng.binomial(c, p1)
                return (c - b) * k0 + b * k1

            out.append(two_point)
        else:
            out.append(
                lambda c, rng, atoms=atoms, probs=probs: rng.multinomial(c, probs)
                @ atoms
            )
    return out


def simulate(model: BranchingModel, x0, cfg: SimConfig) -> SimulationResult:
    """Independent trajectories of the process, deterministic given the seed."""
    laws = _law_arrays(model)
    x0 = np.array([int(c) for c in x0], dtype=np.int64)
    R, H, d = cfg.replicates, cfg.horizon, model.d
    states = np.zeros((R, H + 1, d), dtype=np.int64)
    progeny = np.zeros((R, d), dtype=np.int64)
    extinct = np.zeros(R, dtype=bool)
    extinct_time = np.full(R, -1, dtype=np.int64)
    censored = np.zeros(R, dtype=bool)
    seek = _substream_seeker(cfg.seed)
    for rep in range(R):
        rng = seek(rep)
        state = x0.copy()
        total = x0.copy()
        states[rep, 0] = state
        for t in range(1, H + 1):
            if state.sum() == 0:
                if extinct_time[rep] < 0:
                    extinct[rep] = True
                    extinct_time[rep] = t - 1
                break
            state = _step_population(state, laws, rng)
            total += state
            states[rep, t] = state
            if state.sum() > cfg.pop_cap or total.sum() > cfg.progeny_cap:
                censored[rep] = True
                states[rep, t:] = state
                break
        else:
            if state.sum() == 0 and extinct_time[rep] < 0:
                extinct[rep] = True
                extinct_time[rep] = H
        progeny[rep] = total
    return SimulationResult(
        states=states,
        progeny=progeny,
        extinct=extinct,
        extinct_time=extinct_time,
        censored=censored,
        config=cfg,
    )


@dataclass(frozen=True)
class MCCondition:
    """Conditioning event for rejection sampling.

    kind 'set': X at lag ``n`` past the path end lies in ``S`` (and the
    process eventually dies out); 'nonextinct': same with S = everything
    nonzero; 'progeny': the total progeny equals ``progeny`` exactly.
    """

    kind: str
    n: int = 0
    S: ConditioningSet | None = None
    progeny: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("set", "nonextinct", "progeny"):
            raise ModelValidationError(f"unknown condition kind {self.kind!r}")
        if self.kind == "set" and self.S is None:
            raise ModelValidationError("set condition needs a conditioning set")
        if self.kind == "progeny" and self.progeny is None:
            raise ModelValidationError("progeny condition needs a target vector")


def conditioned_estimate(
    model: BranchingModel,
    ev: PathEvent,
    condition: MCCondition,
    cfg: SimConfig,
    threads: int = 1,
) -> EstimateWithError:
    """Rejection-sampling estimate of P(path | condition).

    For the 'set' and 'nonextinct' kinds on a supercritical model, the
    eventual-extinction requirement is decided by simulating past the
    observation time until death or a cap; subcritical and critical models
    die out almost surely, so the requirement is vacuous there.  For the
    'progeny' kind the horizon must cover ||target||_1 generations, which
    every tree with that progeny fits inside.
    """
    laws = _law_arrays(model)
    x0 = np.array(ev.initial, dtype=np.int64)
    path_times = set(int(t) for t in ev.times)
    kj = ev.last_time
    q = extinction_vector(model).q
    needs_extinction = condition.kind != "progeny" and bool(np.any(q < 1.0 - 1e-12))
    if condition.kind == "progeny":
        target = np.array(condition.progeny, dtype=np.int64)
        if sum(condition.progeny) > cfg.horizon:
            raise ModelValidationError(
                f"horizon {cfg.horizon} cannot hold progeny {condition.progeny}"
            )
        watch_time = kj
    else:
        target = None
        watch_time = kj + condition.n
        if watch_time > cfg.horizon:
            raise ModelValidationError(
                f"horizon {cfg.horizon} shorter than observation time {watch_time}"
            )

    def run_progeny_replicate(rng, snaps):
        state = x0.copy()
        total = x0.copy()
        t = 0
        while state.sum() > 0:
            if t >= cfg.horizon:
                return False, False, snaps
            state = _step_population(state, laws, rng)
            t += 1
            total += state
            if t in path_times:
                snaps[t] = state.copy()
            if np.any(total > target):
                return False, False, snaps  # progeny only grows: already failed
            if state.sum() > cfg.pop_cap:
                return False, True, snaps
        return bool(np.array_equal(total, target)), False, snaps

    def run_lag_replicate(rng, snaps):
        state = x0.copy()
        total = x0.copy()
        for t in range(1, watch_time + 1):
            if state.sum() > 0:
                state = _step_population(state, laws, rng)
                total += state
                if state.sum() > cfg.pop_cap or total.sum() > cfg.progeny_cap:
                    return False, True, snaps
            if t in path_times:
                snaps[t] = state.copy()
        if condition.kind == "set":
            ok = condition.S.contains(tuple(int(c) for c in state))
        else:
            ok = state.sum() > 0
        if ok and needs_extinction and state.sum() > 0:
            verdict = _dies_out(state, laws, rng, cfg, total)
            if verdict is None:
                return False, True, snaps
            ok = verdict
        return ok, False, snaps

    def run_chunk(bounds):
        lo, hi = bounds
        accepted = matched = censored = 0
        seek = _substream_seeker(cfg.seed)
        for rep in range(lo, hi):
            rng = seek(rep)
            snaps = {0: x0.copy()}
            if condition.kind == "progeny":
                ok, cens, snaps = run_progeny_replicate(rng, snaps)
            else:
                ok, cens, snaps = run_lag_replicate(rng, snaps)
            if cens:
                censored += 1
            if not ok:
                continue
            accepted += 1
            zero = np.zeros_like(x0)
            hit = all(
                np.array_equal(snaps.get(int(t), zero), np.asarray(s))
                for t, s in zip(ev.times, ev.states)
            )
            if hit:
                matched += 1
        return accepted, matched, censored

    R = cfg.replicates
    threads = max(1, int(threads))
    if threads == 1:
        parts = [run_chunk((0, R))]
    else:
        bounds = np.linspace(0, R, threads + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_chunk, zip(bounds, bounds[1:])))
    accepted = sum(p[0] for p in parts)
    matched = sum(p[1] for p in parts)
    censored = sum(p[2] for p in parts)

    if accepted == 0:
        raise DegenerateConditionError(
            "no replicate satisfied the condition; increase replicates or "
            "weaken the conditioning event"
        )
    p_hat = matched / accepted
    se = float(np.sqrt(p_hat * (1.0 - p_hat) / accepted))
    return EstimateWithError(
        estimate=float(p_hat), std_error=se, n_effective=accepted, censored=censored
    )


def _dies_out(state, laws, rng, cfg: SimConfig, total):
    """Continue a surviving replicate until extinction, a cap, or the horizon.

    Returns True/False for a decided fate, None when a cap censored it.
    """
    state = state.copy()
    total = total.copy()
    for _ in range(cfg.horizon):
        if state.sum() == 0:
            return True
        state = _step_population(state, laws, rng)
        total += state
        if state.sum() > cfg.pop_cap or total.sum() > cfg.progeny_cap:
            return None
    return state.sum() == 0
