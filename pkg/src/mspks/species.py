"""Coupling matrices, mass vectors and the algebraic conditions on them.

Everything here is a pure function of small dense arrays. Subsets of species
are represented as sorted tuples of 0-based indices.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np

EIGHT_PI = 8.0 * np.pi
MAX_SPECIES = 16
REL_TOL = 1e-12


class NotSymmetricError(ValueError):
    """Raised when an operation proven only for symmetric couplings gets a non-symmetric one."""


def _as_matrix(B) -> np.ndarray:
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError(f"coupling matrix must be square, got shape {B.shape}")
    return B


def is_symmetric(B) -> bool:
    B = _as_matrix(B)
    return bool(np.array_equal(B, B.T))


@dataclass(frozen=True, eq=False)
class CouplingModel:
    """Species count, coupling matrix ``B``, masses ``M`` and sensitivities ``chi``."""

    B: np.ndarray
    M: np.ndarray
    chi: np.ndarray = None

    def __post_init__(self):
        B = _as_matrix(self.B)
        M = np.atleast_1d(np.asarray(self.M, dtype=np.float64))
        chi = np.ones_like(M) if self.chi is None else np.atleast_1d(np.asarray(self.chi, dtype=np.float64))
        k = B.shape[0]
        if not 1 <= k <= MAX_SPECIES:
            raise ValueError(f"species count must be in [1, {MAX_SPECIES}], got {k}")
        if M.shape != (k,) or chi.shape != (k,):
            raise ValueError(f"B is {k}x{k} but len(M)={M.size}, len(chi)={chi.size}")
        if not np.all(np.isfinite(B)):
            raise ValueError("B has non-finite entries")
        if not np.all(M > 0):
            raise ValueError(f"masses must be positive, got {M}")
        if not np.all(chi > 0):
            raise ValueError(f"sensitivities must be positive, got {chi}")
        for name, arr in (("B", B), ("M", M), ("chi", chi)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def species_count(self) -> int:
        return self.B.shape[0]

    @property
    def symmetric(self) -> bool:
        return is_symmetric(self.B)

    @property
    def full_set(self) -> tuple[int, ...]:
        return tuple(range(self.species_count))

    def __eq__(self, other):
        if not isinstance(other, CouplingModel):
            return NotImplemented
        return (np.array_equal(self.B, other.B) and np.array_equal(self.M, other.M)
                and np.array_equal(self.chi, other.chi))


def positive_part(B) -> np.ndarray:
    return np.maximum(_as_matrix(B), 0.0)


def _subset(J, k: int) -> np.ndarray:
    idx = np.asarray(sorted(set(int(j) for j in J)), dtype=int)
    if idx.size == 0:
        raise ValueError("subset must be nonempty")
    if idx[0] < 0 or idx[-1] >= k:
        raise ValueError(f"subset {tuple(idx)} out of range for {k} species")
    return idx


def q_value(B: np.ndarray, M: np.ndarray, J) -> float:
    """``sum_{a,b in J} B_ab M_a M_b / sum_{a in J} M_a``."""
    idx = _subset(J, B.shape[0])
    m = M[idx]
    return float(m @ B[np.ix_(idx, idx)] @ m / m.sum())


def q_functional(model: CouplingModel, J, use_positive_part: bool = False) -> float:
    B = positive_part(model.B) if use_positive_part else model.B
    return q_value(B, model.M, J)


def proper_subsets(k: int):
    """Nonempty proper subsets of ``range(k)``, smallest first."""
    for size in range(1, k):
        yield from itertools.combinations(range(k), size)


class Verdict(enum.Enum):
    SUBCRITICAL = "Subcritical"
    SUPERCRITICAL = "Supercritical"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class SubsetVerdict:
    verdict: Verdict
    q_full: float
    worst_subset: tuple[int, ...] | None = None
    worst_q: float | None = None
    q_full_signed: float | None = None


def _strictly_less(a: float, b: float, scale: float) -> bool:
    return a < b - REL_TOL * scale


def subcritical_check(model: CouplingModel) -> SubsetVerdict:
    """Classify the mass/coupling pair against the subcritical conditions.

    Subcritical: ``Q_{B+}[I] < 8 pi`` and every proper subset has a strictly
    smaller ``Q_{B+}``. Supercritical: symmetric ``B`` with ``Q_B[I] > 8 pi``.
    Equality cases (relative tolerance 1e-12) are Indeterminate.
    """
    k = model.species_count
    if k > MAX_SPECIES:
        raise ValueError(f"subset enumeration is capped at {MAX_SPECIES} species")
    Bp = positive_part(model.B)
    full = model.full_set
    q_full = q_value(Bp, model.M, full)
    q_signed = q_value(model.B, model.M, full)
    worst, worst_q = None, None
    for J in proper_subsets(k):
        q = q_value(Bp, model.M, J)
        if worst_q is None or q > worst_q:
            worst, worst_q = J, q
    scale = EIGHT_PI
    if model.symmetric and q_signed > EIGHT_PI + REL_TOL * scale:
        verdict = Verdict.SUPERCRITICAL
    elif (np.any(Bp > 0) and _strictly_less(q_full, EIGHT_PI, scale)
          and (worst_q is None or _strictly_less(worst_q, q_full, max(abs(q_full), scale)))):
        verdict = Verdict.SUBCRITICAL
    else:
        verdict = Verdict.INDETERMINATE
    return SubsetVerdict(verdict, q_full, worst, worst_q, q_signed)


def _check_nonneg_symmetric(A) -> np.ndarray:
    A = _as_matrix(A)
    if np.any(A < 0):
        raise ValueError("matrix must have nonnegative entries")
    if not is_symmetric(A):
        raise NotSymmetricError("matrix must be symmetric")
    return A


def lambda_J(A, M, J) -> float:
    """``8 pi sum_J M_a - sum_{a,b in J} A_ab M_a M_b``."""
    A = _as_matrix(A)
    if np.any(A < 0):
        raise ValueError("matrix must have nonnegative entries")
    M = np.asarray(M, dtype=np.float64)
    idx = _subset(J, A.shape[0])
    m = M[idx]
    return float(EIGHT_PI * m.sum() - m @ A[np.ix_(idx, idx)] @ m)


@dataclass(frozen=True)
class LogHLSResult:
    bounded_below: bool
    minimizer_exists: bool
    lambdas: dict = field(default_factory=dict)


def log_hls_condition(A, M) -> LogHLSResult:
    """Lower-bound / minimizer conditions of the log-HLS inequality for systems."""
    A = _check_nonneg_symmetric(A)
    M = np.asarray(M, dtype=np.float64)
    k = A.shape[0]
    tol = REL_TOL * EIGHT_PI * np.sum(np.abs(M))
    lambdas = {}
    for size in range(1, k + 1):
        for J in itertools.combinations(range(k), size):
            lambdas[J] = lambda_J(A, M, J)

    def lam(J):
        return lambdas[tuple(J)] if J else 0.0

    full = tuple(range(k))
    full_zero = abs(lambdas[full]) <= tol
    bounded = full_zero and all(v >= -tol for v in lambdas.values())
    if bounded:
        for J, v in lambdas.items():
            if abs(v) <= tol:
                for a in J:
                    rest = tuple(b for b in J if b != a)
                    if not A[a, a] + lam(rest) > tol:
                        bounded = False
                        break
            if not bounded:
                break
    minimizer = full_zero and all(v > tol for J, v in lambdas.items() if J != full)
    return LogHLSResult(bounded, minimizer, lambdas)


@dataclass(frozen=True)
class SpectralBound:
    rho: float
    bound_holds: bool


def spectral_sufficient(model: CouplingModel) -> SpectralBound:
    """Largest eigenvalue of ``B+`` and the test ``rho * max M < 8 pi``."""
    Bp = positive_part(model.B)
    if not is_symmetric(Bp):
        raise NotSymmetricError("positive part of B must be symmetric")
    rho = float(np.linalg.eigvalsh(Bp)[-1])
    return SpectralBound(rho, bool(_strictly_less(rho * float(np.max(model.M)), EIGHT_PI, EIGHT_PI)))


@dataclass(frozen=True)
class DissipativityChain:
    is_essentially_dissipative: bool
    chain: tuple[frozenset, ...]


def essentially_dissipative(B) -> DissipativityChain:
    """Nested sets of species whose rows are nonpositive outside the previous set."""
    B = _as_matrix(B)
    k = B.shape[0]
    everyone = frozenset(range(k))
    nonpos = B <= 0
    current = frozenset(a for a in range(k) if np.all(nonpos[a]))
    chain = [current]
    for _ in range(k):
        outside = sorted(everyone - current)
        current = frozenset(a for a in range(k) if np.all(nonpos[a, outside]))
        chain.append(current)
    return DissipativityChain(chain[-1] == everyone, tuple(chain))


@dataclass(frozen=True)
class Symmetrization:
    eta: np.ndarray
    B_sym: np.ndarray


def symmetrize_tridiagonal(B) -> Symmetrization:
    """Per-species scalings ``eta`` making a sign-symmetric tridiagonal ``B`` symmetric.

    With ``n~_a = eta_a n_a`` the tagged system has coefficients
    ``B'_ab = B_ab / eta_b``. A zero coupling pair splits the chain into
    independent blocks, each restarted at ``eta = 1``.
    """
    B = _as_matrix(B)
    k = B.shape[0]
    a, b = np.nonzero(B)
    if np.any(np.abs(a - b) > 1):
        raise ValueError("matrix is not tridiagonal")
    if not np.array_equal(np.sign(B), np.sign(B.T)):
        raise ValueError("sign(b_ab) != sign(b_ba): cannot symmetrize")
    eta = np.ones(k)
    for i in range(k - 1):
        up, down = B[i, i + 1], B[i + 1, i]
        eta[i + 1] = 1.0 if up == 0.0 else eta[i] * up / down
    # no mirroring: the pairs b_{i,i+1}/eta_{i+1}, b_{i+1,i}/eta_i agree by construction
    return Symmetrization(eta, B / eta[None, :])


def rescale_sensitivities(model: CouplingModel) -> CouplingModel:
    """Tagged model with unit sensitivities: ``n' = n / chi``, ``B' = chi_a B_ab chi_b``."""
    chi = model.chi
    if np.any(chi <= 0):
        raise ValueError("sensitivities must be positive")
    B = chi[:, None] * model.B * chi[None, :]
    return CouplingModel(B, model.M / chi, np.ones_like(chi))


def second_moment_slope(model: CouplingModel) -> float:
    """``dV/dt = (sum 4 M_a)(1 - Q_B[I] / 8 pi)`` for symmetric ``B``."""
    if not model.symmetric:
        raise NotSymmetricError("the second-moment law needs a symmetric B")
    q = q_value(model.B, model.M, model.full_set)
    return float(4.0 * model.M.sum() * (1.0 - q / EIGHT_PI))


def blowup_time_bound(model: CouplingModel, V0: float) -> float | None:
    """Time at which the linear second-moment law reaches zero, if it decreases."""
    slope = second_moment_slope(model)
    if slope >= 0:
        return None
    return float(V0 / -slope)


def proper_subsets_of(S):
    S = tuple(S)
    for size in range(1, len(S)):
        yield from itertools.combinations(S, size)


def support(B) -> tuple[int, ...]:
    B = _as_matrix(B)
    return tuple(int(i) for i in np.nonzero(np.any(B != 0, axis=1))[0])


@dataclass(frozen=True)
class PartReport:
    support: tuple[int, ...]
    C: float | None
    subset_ok: bool


@dataclass(frozen=True)
class DecompositionResult:
    valid_decomposition: bool
    condition_holds: bool
    parts: tuple[PartReport, ...]
    row_sums: tuple[float, ...]
    note: str = ("C_l is taken as Q_{B_l,M}[support(B_l)], the largest value the "
                 "strict subset inequalities allow")


def check_decomposition_condition(model: CouplingModel, parts) -> DecompositionResult:
    """Check a splitting ``B = sum_l B_l`` against the per-part subset conditions."""
    B = model.B
    k = model.species_count
    mats = [_as_matrix(p) for p in parts]
    for p in mats:
        if p.shape != (k, k):
            raise ValueError(f"part of shape {p.shape} does not match {k} species")
    if np.any(B < 0):
        raise ValueError("decomposition check requires B = B+")
    valid = bool(mats) and np.allclose(sum(mats), B, rtol=0.0, atol=1e-12 * max(1.0, np.abs(B).max()))
    valid = valid and all(np.all(p >= 0) and is_symmetric(p) for p in mats)
    reports = []
    totals = np.zeros(k)
    holds = valid
    for p in mats:
        S = support(p)
        if not S:
            reports.append(PartReport(S, None, True))
            continue
        C = q_value(p, model.M, S)
        # J & S ranges over the nonempty proper subsets of S as J ranges over
        # proper subsets of I; J & S == S only repeats the full value
        ok = all(_strictly_less(q_value(p, model.M, T), C, max(abs(C), EIGHT_PI))
                 for T in proper_subsets_of(S))
        ok = ok and _strictly_less(C, EIGHT_PI, EIGHT_PI)
        holds = holds and ok
        totals[list(S)] += C
        reports.append(PartReport(S, C, ok))
    rows_ok = bool(np.all(totals < EIGHT_PI * (1 - REL_TOL)))
    return DecompositionResult(bool(valid), bool(holds and rows_ok), tuple(reports), tuple(totals))
