"""Multitype offspring laws: validation, generating functions and moments.

A model is a list of d finitely supported offspring laws on N^d, one per
type.  Everything downstream (tilting, lattice kernels, progeny formulas)
evaluates exact finite sums over these supports.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ModelValidationError

MASS_TOL = 1e-12


def wielandt_bound(d: int) -> int:
    """Primitivity witness cap: beyond it the matrix is provably not primitive."""
    return (d - 1) ** 2 + 1


@dataclass(frozen=True)
class OffspringLaw:
    """Finite offspring distribution: atoms (K, d) int array, probs (K,)."""

    atoms: np.ndarray
    probs: np.ndarray

    @staticmethod
    def from_pairs(pairs, d=None):
        """Build from an iterable of (k, p) pairs; atoms sorted canonically."""
        pairs = [(tuple(int(c) for c in k), float(p)) for k, p in pairs]
        if not pairs:
            raise ModelValidationError("offspring law has empty support")
        if d is None:
            d = len(pairs[0][0])
        pairs.sort(key=lambda kp: kp[0])
        atoms = np.array([k for k, _ in pairs], dtype=np.int64).reshape(len(pairs), d)
        probs = np.array([p for _, p in pairs], dtype=float)
        if np.any(atoms < 0):
            raise ModelValidationError("offspring atoms must lie in N^d")
        if np.any(probs < 0):
            raise ModelValidationError("negative offspring probability")
        total = probs.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise ModelValidationError(f"offspring masses sum to {total!r}, not 1")
        return OffspringLaw(atoms=atoms, probs=probs / total)

    def max_offspring(self):
        return self.atoms.max(axis=0)

    def mean(self):
        return self.probs @ self.atoms

    def second_moment(self):
        a = self.atoms.astype(float)
        return np.einsum("k,ki,kj->ij", self.probs, a, a)

    def covariance(self):
        m = self.mean()
        return self.second_moment() - np.outer(m, m)

    def pairs(self):
        return [(tuple(int(c) for c in k), float(p)) for k, p in zip(self.atoms, self.probs)]


@dataclass(frozen=True)
class BranchingModel:
    """d offspring laws with finite support; the process's full description."""

    d: int
    laws: tuple[OffspringLaw, ...]

    @staticmethod
    def from_laws(laws):
        laws = tuple(laws)
        if not laws:
            raise ModelValidationError("model needs at least one type")
        d = laws[0].atoms.shape[1]
        for i, law in enumerate(laws):
            if law.atoms.shape[1] != d:
                raise ModelValidationError(f"type {i}: atom dimension != d={d}")
        return BranchingModel(d=d, laws=laws)

    # -- JSON wire format ---------------------------------------------------
    # {"d": int, "types": [{"atoms": [{"k": [int, ...], "p": float}]}]}

    @staticmethod
    def from_dict(doc):
        try:
            d = int(doc["d"])
            types = doc["types"]
        except (KeyError, TypeError) as exc:
            raise ModelValidationError(f"model JSON missing field: {exc}") from exc
        if d < 1:
            raise ModelValidationError("d must be >= 1")
        if len(types) != d:
            raise ModelValidationError(f"expected {d} type entries, got {len(types)}")
        laws = []
        for i, entry in enumerate(types):
            try:
                pairs = [(atom["k"], atom["p"]) for atom in entry["atoms"]]
                for atom in entry["atoms"]:
                    if len(atom["k"]) != d:
                        raise ModelValidationError(
                            f"type {i}: atom vector length != d={d}"
                        )
                laws.append(OffspringLaw.from_pairs(pairs, d=d))
            except ModelValidationError as exc:
                raise ModelValidationError(f"type {i}: {exc}") from None
        return BranchingModel(d=d, laws=tuple(laws))

    def to_dict(self):
        return {
            "d": self.d,
            "types": [
                {"atoms": [{"k": list(k), "p": p} for k, p in law.pairs()]}
                for law in self.laws
            ],
        }

    @staticmethod
    def load(path):
        with open(path) as fh:
            return BranchingModel.from_dict(json.load(fh))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def max_offspring(self):
        return np.max([law.max_offspring() for law in self.laws], axis=0)


@dataclass(frozen=True)
class ModelDiagnostics:
    nonsingular: bool
    positive_regular: bool
    positive_regular_witness: int | None
    aperiodic_A5: bool
    q_positive: str  # deferred to the extinction solver; "unknown" here
    moment_orders_available: float


def validate(model: BranchingModel) -> ModelDiagnostics:
    """Compute structural flags exactly from the finite supports."""
    # Singular means every type's generating function is linear with zero
    # constant term, i.e. every atom is a unit vector.
    nonsingular = any(
        np.any(law.atoms.sum(axis=1) != 1) for law in model.laws
    )
    M = mean_matrix(model)
    witness = _primitivity_witness(M > 0)
    aperiodic = _aperiodicity_scan(model)
    return ModelDiagnostics(
        nonsingular=bool(nonsingular),
        positive_regular=witness is not None,
        positive_regular_witness=witness,
        aperiodic_A5=aperiodic,
        q_positive="unknown",
        moment_orders_available=math.inf,
    )


def _primitivity_witness(B: np.ndarray) -> int | None:
    """Smallest n within the Wielandt bound with B^n all-positive, or None."""
    d = B.shape[0]
    P = B.copy()
    for n in range(1, wielandt_bound(d) + 1):
        if P.all():
            return n
        P = (P @ B) > 0
    return None


def _aperiodicity_scan(model: BranchingModel) -> bool:
    """For each j, some law holds both k and k + e_j with positive mass."""
    supports = [
        {tuple(int(c) for c in k) for k, p in zip(law.atoms, law.probs) if p > 0}
        for law in model.laws
    ]
    for j in range(model.d):
        ok = False
        for supp in supports:
            for k in supp:
                kj = list(k)
                kj[j] += 1
                if tuple(kj) in supp:
                    ok = True
                    break
            if ok:
                break
        if not ok:
            return False
    return True


# -- generating functions -------------------------------------------------


def _poly_eval(model: BranchingModel, r: np.ndarray) -> np.ndarray:
    """f(r) as an exact finite sum, no domain restriction (r >= 0)."""
    r = np.asarray(r, dtype=float)
    out = np.empty(model.d)
    for i, law in enumerate(model.laws):
        out[i] = law.probs @ np.prod(r[None, :] ** law.atoms, axis=1)
    return out


def gen_fn(model: BranchingModel, r) -> np.ndarray:
    """Offspring generating function on [0,1]^d."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if r.shape != (model.d,):
        raise ModelValidationError(f"r must have shape ({model.d},)")
    if np.any(r < 0) or np.any(r > 1):
        raise ModelValidationError("r outside [0,1]^d")
    return _poly_eval(model, r)


def gen_fn_iterate(model: BranchingModel, r, n: int) -> np.ndarray:
    """n-th functional iterate; n = 0 is the identity."""
    if n < 0:
        raise ModelValidationError("iterate count must be >= 0")
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(r < 0) or np.any(r > 1):
        raise ModelValidationError("r outside [0,1]^d")
    out = r.astype(float).copy()
    for _ in range(n):
        out = _poly_eval(model, out)
    return out


def survival_complements(model: BranchingModel, n: int, eps0=None) -> np.ndarray:
    """Iterates eps_k = 1 - f_k(1 - eps_0), default eps_0 = 1 (so f_k(0)).

    Tracking the complement keeps full relative precision once the iterates
    approach 1, where 1 - f_k(0) underflows additively in float64.  Returns
    an (n+1, d) array, row k holding eps_k.
    """
    eps = np.ones(model.d) if eps0 is None else np.asarray(eps0, dtype=float).copy()
    out = np.empty((n + 1, model.d))
    out[0] = eps
    for k in range(1, n + 1):
        eps = _one_minus_f_at_one_minus(model, eps)
        out[k] = eps
    return out


def _one_minus_f_at_one_minus(model: BranchingModel, eps: np.ndarray) -> np.ndarray:
    # 1 - f_i(1-eps) = sum_k p_i(k) * (1 - prod_j (1-eps_j)^{k_j}), each term
    # computed as -expm1(sum_j k_j*log1p(-eps_j)) so no cancellation occurs.
    logs = np.where(eps >= 1.0, -1e6, np.log1p(-np.minimum(eps, 1.0 - 1e-16)))
    out = np.empty(model.d)
    for i, law in enumerate(model.laws):
        expo = law.atoms @ logs
        out[i] = law.probs @ (-np.expm1(expo))
    return out


def one_minus_power(eps: np.ndarray, x) -> float:
    """1 - prod_j (1-eps_j)^{x_j} without cancellation."""
    x = np.asarray(x, dtype=float)
    logs = np.where(eps >= 1.0, -1e6, np.log1p(-np.minimum(eps, 1.0 - 1e-16)))
    return float(-np.expm1(x @ logs))


# -- moments ---------------------------------------------------------------


def mean_matrix(model: BranchingModel) -> np.ndarray:
    return np.array([law.mean() for law in model.laws])


def covariance_matrices(model: BranchingModel) -> list[np.ndarray]:
    return [law.covariance() for law in model.laws]


# -- bundled fixture models ------------------------------------------------

FIXTURE_NAMES = ("A", "B", "C", "D", "E")


def fixture_model(name: str) -> BranchingModel:
    """Load one of the bundled models A..E."""
    key = name.strip().upper()
    if key not in FIXTURE_NAMES:
        raise ModelValidationError(f"unknown fixture {name!r}; have {FIXTURE_NAMES}")
    data = resources.files("gwlab.models").joinpath(f"model_{key.lower()}.json")
    return BranchingModel.from_dict(json.loads(data.read_text()))
