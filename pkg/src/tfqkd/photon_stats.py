"""Sum-photon statistics and decoy-decomposition coefficients.

A symmetric coherent pulse pair of intensity ``mu`` per arm has Poissonian
total photon number, ``P_s = e^{-2mu} (2mu)^s / s!``.  The even-photon part
of the code-mode state is what can leak key information; its weight is
``p_even = e^{-2mu} cosh(2mu)``.

The decoy mixture (vacuum + postselected mu1 pulses) decomposes per total
photon number with weights

    q_0 = p10^2 - p11^2 (delta/pi) e^{-2 mu1} (mu1 - mu2)/mu2
    q_s = p11^2 (delta/pi) mu1 e^{-2 mu1} 2^s (mu1^{s-1} - mu2^{s-1})/s!,  s >= 1

after subtracting a mu2-component of weight

    gamma = p11^2 (delta/pi) (mu1 e^{-2 mu1}) / (mu2 e^{-2 mu2}).

The even-photon weight lambda then satisfies

    p_even / lambda = sum_{s even} P_s / q_s                (two-phase)
    p_even / lambda = sqrt( sum_{k,l even, k+l = 0 mod 4}
                            P_k P_l / (q_k q_l) )           (four-phase)

Both series are summed with a rigorous geometric tail bound; the tail is
*added* to the denominator sum before dividing, so the returned lambda is
never an overestimate (underestimating lambda loosens, never tightens, the
phase-error bound downstream).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from .params import ProtocolParams, validate

# Default relative truncation tolerance.  Chosen so that the reported tail
# bound stays below 1e-12 of the full series, which downstream tolerances
# assume.
DEFAULT_REL_TOL = 1e-12

# Summation never needs anywhere near this many terms for convergent inputs;
# hitting the cap means the term ratio (mu/mu1)^2 is too close to 1.
MAX_SERIES_ORDER = 4000

_LOG_SPACE_THRESHOLD = 20


class SeriesConvergenceError(ArithmeticError):
    """The even-photon series cannot be summed for these parameters."""


def poisson_twin(s: int, mu: float) -> float:
    """Probability that a symmetric pulse pair of intensity mu per arm
    carries s photons in total: e^{-2 mu} (2 mu)^s / s!.

    Evaluated in log space for s > 20 so large orders neither overflow the
    power nor the factorial.
    """
    if s < 0:
        raise ValueError(f"photon number s={s} must be >= 0")
    if mu < 0:
        raise ValueError(f"intensity mu={mu} must be >= 0")
    if mu == 0.0:
        return 1.0 if s == 0 else 0.0
    if s <= _LOG_SPACE_THRESHOLD:
        return math.exp(-2.0 * mu) * (2.0 * mu) ** s / math.factorial(s)
    return math.exp(-2.0 * mu + s * math.log(2.0 * mu) - math.lgamma(s + 1))


def p_even(mu: float) -> float:
    """Probability that the total photon number of a code pulse pair is even."""
    if mu < 0:
        raise ValueError(f"intensity mu={mu} must be >= 0")
    return math.exp(-2.0 * mu) * math.cosh(2.0 * mu)


def q_s(s: int, params: ProtocolParams, check: bool = True) -> float:
    """Per-photon-number weight of the reduced decoy mixture.

    q_1 is identically zero; q_0 > 0 is exactly the vacuum-weight floor
    enforced by validation; q_s > 0 for even s >= 2 whenever mu2 < mu1.
    """
    if check:
        validate(params).raise_if_invalid()
    if s < 0:
        raise ValueError(f"photon number s={s} must be >= 0")
    frac = params.p11 ** 2 * (params.delta / math.pi) * math.exp(-2.0 * params.mu1)
    if s == 0:
        return params.p10 ** 2 - frac * (params.mu1 - params.mu2) / params.mu2
    if s <= _LOG_SPACE_THRESHOLD:
        diff = params.mu1 ** (s - 1) - params.mu2 ** (s - 1)
        return frac * params.mu1 * 2.0 ** s * diff / math.factorial(s)
    # 2^s (mu1^{s-1} - mu2^{s-1}) / s! in log space, factoring out mu1^{s-1}.
    ratio = params.mu2 / params.mu1
    scale = math.exp(s * math.log(2.0) + (s - 1) * math.log(params.mu1)
                     - math.lgamma(s + 1))
    return frac * params.mu1 * scale * (1.0 - ratio ** (s - 1))


def gamma(params: ProtocolParams) -> float:
    """Weight of the mu2-state subtracted from the decoy mixture.

    Deliberately does not run full validation: the ratio is well defined for
    any mu2 > 0 (mu1 = mu2 gives p11^2 delta/pi), which the relaxed mode of
    downstream tools relies on.
    """
    if params.mu2 <= 0:
        raise ValueError(f"mu2={params.mu2} must be > 0")
    return (params.p11 ** 2 * (params.delta / math.pi)
            * (params.mu1 * math.exp(-2.0 * params.mu1))
            / (params.mu2 * math.exp(-2.0 * params.mu2)))


@dataclass(frozen=True)
class DecoyCoefficients:
    """The decoy-decomposition weights and series-truncation metadata.

    Attributes:
        gamma: mu2-component weight.
        lambda_: even-photon component weight (variant-specific series).
        p_even: even-total-photon probability of the code mode.
        q_table: q_s for every s up to s_max (odd orders included).
        s_max: truncation order of the series (even).
        tail_bound: rigorous bound on the truncation error of p_even/lambda.
        t_residual: junk-state weight p10^2 + p11^2 delta/pi - gamma - lambda;
            a negative value means the parameter set admits no physical
            decoy decomposition and must be treated as infeasible.
    """

    gamma: float
    lambda_: float
    p_even: float
    q_table: Mapping[int, float]
    s_max: int
    tail_bound: float
    t_residual: float

    def to_json_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "lambda": self.lambda_,
            "p_even": self.p_even,
            "s_max": self.s_max,
            "tail_bound": self.tail_bound,
            "t_residual": self.t_residual,
        }


def _even_terms(params: ProtocolParams):
    """Yield (s, P_s/q_s) for even s, in increasing order, without overflow.

    For s >= 2 the term is C * mu1 * r^s / (1 - x^{s-1}) with r = mu/mu1,
    x = mu2/mu1 and C = e^{-2mu} e^{2mu1} / (p11^2 (delta/pi) mu1); the
    ratio of consecutive even terms is bounded by r^2 for all s >= 2.
    """
    q0 = q_s(0, params, check=False)
    if q0 <= 0.0:
        raise SeriesConvergenceError(f"q_0={q0} is not positive")
    yield 0, math.exp(-2.0 * params.mu) / q0

    c = (math.exp(-2.0 * params.mu + 2.0 * params.mu1)
         / (params.p11 ** 2 * (params.delta / math.pi)))
    r = params.mu / params.mu1
    x = params.mu2 / params.mu1
    r_pow = r * r          # r^s at s = 2
    x_pow = x              # x^{s-1} at s = 2
    s = 2
    while True:
        yield s, c * r_pow / (1.0 - x_pow)
        r_pow *= r * r
        x_pow *= x * x
        s += 2


def _convergence_ratio(params: ProtocolParams) -> float:
    rho = (params.mu / params.mu1) ** 2
    if rho >= 1.0:
        raise SeriesConvergenceError(
            f"series diverges: mu={params.mu} >= mu1={params.mu1}")
    return rho


def _build_coefficients(params: ProtocolParams, lam: float, s_max: int,
                        tail_bound: float) -> DecoyCoefficients:
    g = gamma(params)
    pe = p_even(params.mu)
    q_table = {s: q_s(s, params, check=False) for s in range(s_max + 1)}
    t_res = (params.p10 ** 2
             + params.p11 ** 2 * params.delta / math.pi - g - lam)
    return DecoyCoefficients(gamma=g, lambda_=lam, p_even=pe,
                             q_table=q_table, s_max=s_max,
                             tail_bound=tail_bound, t_residual=t_res)


def lambda_two_phase(params: ProtocolParams,
                     rel_tol: float = DEFAULT_REL_TOL,
                     check: bool = True) -> tuple[float, DecoyCoefficients]:
    """Even-photon weight for the two-phase protocol.

    Sums S = sum_{s even} P_s/q_s until the geometric tail bound drops below
    rel_tol * S, then returns lambda = p_even / (S + tail).
    """
    if check:
        validate(params).raise_if_invalid()
    lam, s_max, tail = _two_phase_value(params, rel_tol)
    return lam, _build_coefficients(params, lam, s_max, tail)


def _two_phase_value(params: ProtocolParams,
                     rel_tol: float) -> tuple[float, int, float]:
    rho = _convergence_ratio(params)
    tail_factor = rho / (1.0 - rho)
    partial = 0.0
    for s, term in _even_terms(params):
        partial += term
        if s >= 2:
            tail = term * tail_factor
            if tail <= rel_tol * partial:
                return p_even(params.mu) / (partial + tail), s, tail
        if s > MAX_SERIES_ORDER:
            raise SeriesConvergenceError(
                f"series needs more than {MAX_SERIES_ORDER} orders "
                f"(term ratio {rho:.6f})")


def lambda_four_phase(params: ProtocolParams,
                      rel_tol: float = DEFAULT_REL_TOL,
                      check: bool = True) -> tuple[float, DecoyCoefficients]:
    """Even-photon weight for the four-phase variant.

    The double series restricted to k + l = 0 mod 4 splits by residue class:
    with A = sum_{s = 0 mod 4} P_s/q_s and B = sum_{s = 2 mod 4} P_s/q_s the
    truncation of the double sum at k, l <= s_max equals A^2 + B^2 of the
    per-class partial sums, and a tail t on the single series inflates it by
    at most 2 (A + B) t + 2 t^2.
    """
    if check:
        validate(params).raise_if_invalid()
    lam, s_max, tail = _four_phase_value(params, rel_tol)
    return lam, _build_coefficients(params, lam, s_max, tail)


def _four_phase_value(params: ProtocolParams,
                      rel_tol: float) -> tuple[float, int, float]:
    rho = _convergence_ratio(params)
    tail_factor = rho / (1.0 - rho)
    sum_mod0 = 0.0
    sum_mod2 = 0.0
    for s, term in _even_terms(params):
        if s % 4 == 0:
            sum_mod0 += term
        else:
            sum_mod2 += term
        if s >= 2:
            tail = term * tail_factor
            s2 = sum_mod0 ** 2 + sum_mod2 ** 2
            tail_s2 = 2.0 * (sum_mod0 + sum_mod2) * tail + 2.0 * tail * tail
            if tail_s2 <= rel_tol * s2:
                upper = math.sqrt(s2 + tail_s2)
                return (p_even(params.mu) / upper, s,
                        upper - math.sqrt(s2))
        if s > MAX_SERIES_ORDER:
            raise SeriesConvergenceError(
                f"series needs more than {MAX_SERIES_ORDER} orders "
                f"(term ratio {rho:.6f})")
