"""Numerical certification of the decoy operator-dominance inequality.

The security argument needs the weighted decoy mixture to majorize the
even-photon code state for both relative-phase branches:

    p10^2 |00><00| + p11^2 (delta/pi) tau_pm(mu1) - gamma tau_pm(mu2)
        >= lambda rho_even_pm.

At a fixed residual phase offset phi between the two arms, both sides act on
the span of the total-photon-number states

    |s; phi> = sum_m sqrt(s! / (2^s m! (s-m)!)) e^{i (s-m) phi} |m, s-m>,

the left side as sum_s q_s |s;phi><s;phi| and the right side as the rank-one
operator (lambda/p_even) |w><w| with |w> = sum_{s even} sqrt(P_s) |s;phi>.
The anti-phase branch is the in-phase branch evaluated at phi + pi.

This module rebuilds both sides as explicit matrices on the two-mode Fock
basis truncated at a total photon number cutoff and checks positivity of
their difference by eigendecomposition, pointwise on a grid of phase
offsets.  Pointwise dominance is stronger than the phase-averaged inequality
actually used, so a certificate here certifies the average too.  The check
is deliberately independent of the series identities used to *compute*
lambda: it would catch a wrong q_s, a wrong gamma ratio, or an inflated
lambda.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import ProtocolParams, validate
from .photon_stats import (DecoyCoefficients, gamma, lambda_two_phase,
                           p_even, poisson_twin, q_s)

DEFAULT_N_MAX = 20
DEFAULT_DELTA_GRID = 9
DEFAULT_TOL = 1e-9

# Above this much probability mass beyond the cutoff the certificate is
# dominated by truncation error and a warning is attached.
TRACE_DEFICIT_WARN = 1e-6


def fock_dimension(n_max: int) -> int:
    """Number of two-mode Fock states |m, n> with m + n <= n_max."""
    return (n_max + 1) * (n_max + 2) // 2


def fock_index(m: int, n: int) -> int:
    """Position of |m, n> in the total-photon-number-ordered basis."""
    s = m + n
    return s * (s + 1) // 2 + m


@dataclass(frozen=True)
class TwinFockState:
    """Normalized s-photon state of a symmetric pulse pair.

    amplitudes[m] multiplies |m, s-m>; the weights are the square roots of
    a symmetric binomial, phased by the per-arm phases.
    """

    s: int
    theta_a: float
    theta_b: float
    amplitudes: np.ndarray

    def embed(self, n_max: int) -> np.ndarray:
        """Coefficient vector on the full truncated two-mode basis."""
        if self.s > n_max:
            raise ValueError(f"s={self.s} exceeds cutoff n_max={n_max}")
        vec = np.zeros(fock_dimension(n_max), dtype=complex)
        base = self.s * (self.s + 1) // 2
        vec[base:base + self.s + 1] = self.amplitudes
        return vec


def build_twin_fock(s: int, theta_a: float, theta_b: float) -> TwinFockState:
    """Construct |s; theta_a, theta_b> = sum_m sqrt(C(s,m)/2^s)
    e^{i m theta_a} e^{i (s-m) theta_b} |m, s-m>."""
    if s < 0:
        raise ValueError(f"photon number s={s} must be >= 0")
    m = np.arange(s + 1)
    weights = np.sqrt([math.comb(s, k) / 2.0 ** s for k in m])
    phases = np.exp(1j * (m * theta_a + (s - m) * theta_b))
    return TwinFockState(s=s, theta_a=theta_a, theta_b=theta_b,
                         amplitudes=weights * phases)


@dataclass(frozen=True)
class TruncatedOperator:
    """A Hermitian operator on the truncated two-mode basis plus the trace
    mass the truncation discarded."""

    n_max: int
    matrix: np.ndarray
    trace_deficit: float


def _poisson_tail(mu: float, n_max: int) -> float:
    """sum_{s > n_max} P_s, by direct summation of the decaying tail."""
    total = 0.0
    term = poisson_twin(n_max + 1, mu)
    s = n_max + 1
    while term > total * 1e-18 + 1e-300:
        total += term
        s += 1
        term *= 2.0 * mu / s
    return total


def _even_poisson_tail(mu: float, n_max: int) -> float:
    total = 0.0
    s = n_max + 1 if (n_max + 1) % 2 == 0 else n_max + 2
    term = poisson_twin(s, mu)
    while term > total * 1e-18 + 1e-300:
        total += term
        s += 2
        term *= (2.0 * mu) ** 2 / (s * (s - 1))
    return total


def _phase_grid(delta: float, delta_grid: int) -> np.ndarray:
    if delta_grid < 1:
        raise ValueError(f"delta_grid={delta_grid} must be >= 1")
    if delta_grid == 1:
        return np.array([0.0])
    return np.linspace(-delta / 2.0, delta / 2.0, delta_grid)


def _lhs_at(params: ProtocolParams, phi: float, n_max: int) -> np.ndarray:
    dim = fock_dimension(n_max)
    matrix = np.zeros((dim, dim), dtype=complex)
    for s in range(n_max + 1):
        weight = q_s(s, params, check=False)
        if weight == 0.0:
            continue
        vec = build_twin_fock(s, 0.0, phi).embed(n_max)
        matrix += weight * np.outer(vec, vec.conj())
    return matrix


def _rhs_at(params: ProtocolParams, lam: float, phi: float,
            n_max: int) -> np.ndarray:
    even_vec = np.zeros(fock_dimension(n_max), dtype=complex)
    for s in range(0, n_max + 1, 2):
        even_vec += math.sqrt(poisson_twin(s, params.mu)) \
            * build_twin_fock(s, 0.0, phi).embed(n_max)
    return (lam / p_even(params.mu)) * np.outer(even_vec, even_vec.conj())


def _lhs_trace_deficit(params: ProtocolParams, n_max: int) -> float:
    frac = params.delta / math.pi
    return (params.p11 ** 2 * frac * _poisson_tail(params.mu1, n_max)
            - gamma(params) * _poisson_tail(params.mu2, n_max))


def _sign_phase(sign: str) -> float:
    if sign == "in_phase":
        return 0.0
    if sign == "anti_phase":
        return math.pi
    raise ValueError(f"sign must be 'in_phase' or 'anti_phase', got {sign!r}")


def assemble_lhs(params: ProtocolParams, sign: str,
                 n_max: int = DEFAULT_N_MAX,
                 delta_grid: int = DEFAULT_DELTA_GRID) -> TruncatedOperator:
    """Phase-averaged decoy-side operator for one branch.

    The anti-phase branch shifts every grid offset by pi.  The trace deficit
    is the decoy weight sum_{s > n_max} q_s, evaluated from the Poisson
    tails of the two decoy intensities.
    """
    offset = _sign_phase(sign)
    grid = _phase_grid(params.delta, delta_grid)
    dim = fock_dimension(n_max)
    matrix = np.zeros((dim, dim), dtype=complex)
    for phi in grid:
        matrix += _lhs_at(params, phi + offset, n_max)
    matrix /= len(grid)
    return TruncatedOperator(n_max=n_max, matrix=matrix,
                             trace_deficit=_lhs_trace_deficit(params, n_max))


def assemble_rhs(params: ProtocolParams, sign: str,
                 n_max: int = DEFAULT_N_MAX,
                 delta_grid: int = DEFAULT_DELTA_GRID,
                 lam: float | None = None) -> TruncatedOperator:
    """Phase-averaged lambda-weighted even-photon operator for one branch.

    lam defaults to the two-phase series value for the given parameters.
    """
    if lam is None:
        lam, _ = lambda_two_phase(params)
    offset = _sign_phase(sign)
    grid = _phase_grid(params.delta, delta_grid)
    dim = fock_dimension(n_max)
    matrix = np.zeros((dim, dim), dtype=complex)
    for phi in grid:
        matrix += _rhs_at(params, lam, phi + offset, n_max)
    matrix /= len(grid)
    deficit = lam / p_even(params.mu) \
        * _even_poisson_tail(params.mu, n_max)
    return TruncatedOperator(n_max=n_max, matrix=matrix, trace_deficit=deficit)


@dataclass(frozen=True)
class CertReport:
    """Outcome of a dominance certification run."""

    min_eigenvalue_in: float
    min_eigenvalue_anti: float
    passed: bool
    n_max: int
    delta_grid: int
    tol: float
    trace_deficit: float
    lambda_used: float
    warnings: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "min_eigenvalue_in": self.min_eigenvalue_in,
            "min_eigenvalue_anti": self.min_eigenvalue_anti,
            "pass": self.passed,
            "n_max": self.n_max,
            "delta_grid": self.delta_grid,
            "tol": self.tol,
            "trace_deficit": self.trace_deficit,
            "lambda_used": self.lambda_used,
            "warnings": list(self.warnings),
        }


def verify_dominance(params: ProtocolParams, n_max: int = DEFAULT_N_MAX,
                     delta_grid: int = DEFAULT_DELTA_GRID,
                     tol: float = DEFAULT_TOL,
                     coeffs: DecoyCoefficients | None = None,
                     lambda_scale: float = 1.0) -> CertReport:
    """Certify both dominance branches pointwise on the phase grid.

    Passes iff the minimum eigenvalue of (decoy side - even side) at every
    grid offset, for both branches, stays above -tol - trace_deficit, where
    the trace deficit budgets the mass both operators lose to the cutoff.
    lambda_scale deliberately rescales lambda (used to demonstrate that an
    inflated value breaks dominance).
    """
    validate(params).raise_if_invalid()
    if coeffs is None:
        _, coeffs = lambda_two_phase(params)
    lam = coeffs.lambda_ * lambda_scale

    deficit = (_lhs_trace_deficit(params, n_max)
               + lam / coeffs.p_even * _even_poisson_tail(params.mu, n_max))
    warnings: list[str] = []
    if deficit > TRACE_DEFICIT_WARN:
        warnings.append(
            f"trace deficit {deficit:.3e} exceeds {TRACE_DEFICIT_WARN:.0e}; "
            f"n_max={n_max} is too small for mu up to {params.mu1}")

    minima = {}
    for sign in ("in_phase", "anti_phase"):
        offset = _sign_phase(sign)
        worst = math.inf
        for phi in _phase_grid(params.delta, delta_grid):
            diff = (_lhs_at(params, phi + offset, n_max)
                    - _rhs_at(params, lam, phi + offset, n_max))
            eigenvalues = np.linalg.eigvalsh(diff)
            worst = min(worst, float(eigenvalues[0]))
        minima[sign] = worst

    threshold = -tol - deficit
    passed = (minima["in_phase"] >= threshold
              and minima["anti_phase"] >= threshold)
    return CertReport(
        min_eigenvalue_in=minima["in_phase"],
        min_eigenvalue_anti=minima["anti_phase"],
        passed=passed, n_max=n_max, delta_grid=delta_grid, tol=tol,
        trace_deficit=deficit, lambda_used=lam, warnings=tuple(warnings))
