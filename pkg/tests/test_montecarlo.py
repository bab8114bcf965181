"""Simulation oracle: determinism, unbiasedness, conditioned estimates."""

import numpy as np
import pytest

from gwlab.conditioning import ConditioningSet, SetKind, conditional_path_law
from gwlab.errors import DegenerateConditionError
from gwlab.lattice import Box, PathEvent, n_step
from gwlab.model import BranchingModel, OffspringLaw, mean_matrix
from gwlab.montecarlo import (
    MCCondition,
    SimConfig,
    conditioned_estimate,
    simulate,
)
from gwlab.progeny import _conditional_given_progeny
from gwlab.tilt import extinction_vector


class TestSimulate:
    def test_deterministic_law_constant_trajectories(self):
        m = BranchingModel.from_laws([OffspringLaw.from_pairs([((1,), 1.0)], d=1)])
        sim = simulate(m, (1,), SimConfig(seed=3, replicates=50, horizon=10))
        assert np.all(sim.states[:, :, 0] == 1)
        assert not sim.extinct.any()

    def test_bit_identical_reruns(self, model_c):
        cfg = SimConfig(seed=99, replicates=400, horizon=15)
        a = simulate(model_c, (1, 1), cfg)
        b = simulate(model_c, (1, 1), cfg)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.progeny, b.progeny)

    def test_seed_changes_samples(self, model_c):
        a = simulate(model_c, (1, 1), SimConfig(seed=1, replicates=400, horizon=15))
        b = simulate(model_c, (1, 1), SimConfig(seed=2, replicates=400, horizon=15))
        assert not np.array_equal(a.states, b.states)

    def test_extinct_fraction_model_a(self, model_a):
        cfg = SimConfig(seed=42, replicates=30_000, horizon=60, pop_cap=600)
        sim = simulate(model_a, (1,), cfg)
        q = extinction_vector(model_a).q[0]
        frac = sim.extinct.mean()
        se = np.sqrt(frac * (1 - frac) / cfg.replicates)
        assert abs(frac - q) <= 3 * se

    def test_mean_matches_mean_matrix_power(self, model_c):
        k = 3
        cfg = SimConfig(seed=5, replicates=30_000, horizon=k)
        sim = simulate(model_c, (1, 0), cfg)
        xs = sim.states[:, k, :].astype(float)
        expected = np.array([1.0, 0.0]) @ np.linalg.matrix_power(mean_matrix(model_c), k)
        se = xs.std(axis=0, ddof=1) / np.sqrt(len(xs))
        assert np.all(np.abs(xs.mean(axis=0) - expected) <= 3 * se)

    def test_censoring_flagged(self, model_a):
        cfg = SimConfig(seed=13, replicates=500, horizon=60, pop_cap=16)
        sim = simulate(model_a, (1,), cfg)
        assert sim.censored.any()
        assert not (sim.censored & sim.extinct).any()


class TestConditionedEstimate:
    def test_no_rejection_consistency(self, model_e):
        # lag-zero non-extinction: exact value available from lattice masses
        ev = PathEvent(initial=(2,), times=(1,), states=((1,),))
        cond = MCCondition(kind="nonextinct", n=0)
        cfg = SimConfig(seed=21, replicates=40_000, horizon=10)
        est = conditioned_estimate(model_e, ev, cond, cfg)
        dist = n_step(model_e, (2,), 1, Box(upper=(4,)))
        exact = dist.mass_at((1,)) / (1 - dist.mass_at((0,)))
        assert abs(est.estimate - exact) <= 3 * est.std_error

    def test_progeny_conditioned_model_b(self, model_b):
        ev = PathEvent(initial=(1,), times=(1,), states=((2,),))
        cond = MCCondition(kind="progeny", progeny=(7,))
        cfg = SimConfig(seed=11, replicates=60_000, horizon=30)
        est = conditioned_estimate(model_b, ev, cond, cfg)
        exact = _conditional_given_progeny(model_b, ev, (7,))
        assert est.n_effective > 100
        assert abs(est.estimate - exact) <= 3 * est.std_error

    def test_set_conditioned_model_a(self, model_a):
        ev = PathEvent(initial=(1,), times=(1,), states=((2,),))
        S = ConditioningSet(kind=SetKind.FINITE, states=((2,),))
        cond = MCCondition(kind="set", n=5, S=S)
        cfg = SimConfig(seed=17, replicates=80_000, horizon=120, pop_cap=700)
        est = conditioned_estimate(model_a, ev, cond, cfg)
        exact = conditional_path_law(model_a, ev, S, 5, Box(upper=(70,)))
        assert abs(est.estimate - exact) <= 3 * max(est.std_error, 1e-4)

    def test_threads_do_not_change_results(self, model_b):
        ev = PathEvent(initial=(1,), times=(1,), states=((2,),))
        cond = MCCondition(kind="progeny", progeny=(5,))
        cfg = SimConfig(seed=8, replicates=5_000, horizon=20)
        one = conditioned_estimate(model_b, ev, cond, cfg, threads=1)
        four = conditioned_estimate(model_b, ev, cond, cfg, threads=4)
        assert one == four

    def test_no_acceptance_error(self, model_a):
        # even total progeny is impossible for offspring support {0, 2}
        ev = PathEvent(initial=(1,), times=(1,), states=((2,),))
        cond = MCCondition(kind="progeny", progeny=(2,))
        with pytest.raises(DegenerateConditionError):
            conditioned_estimate(
                model_a, ev, cond, SimConfig(seed=1, replicates=2_000, horizon=10)
            )
