"""Finite-key statistical bounds and the final key length.

The phase-error count of the sifted key is bounded through two Bernoulli
sampling steps: the mu2-decoy count K2 bounds the mu2-like fraction hidden
inside the decoy1 count K1, and the even-photon remainder of K1 bounds the
even-photon (phase-error) fraction of the code count K0.  Both steps use the
approximate concentration bound

    M_pm(K; p, eps) = (1-p)/p * K  +-  sqrt(-log eps) * sqrt(2(1-p))/p * sqrt(K),

valid in the regime (1-p) K >> -log eps.  A closed-form composition of the
two steps is used for optimization; the explicit two-stage composition is
also exposed for cross-checking.

The final key length is

    G = K0 - ceil(K0 h(e_ph)) - ceil(f_cor K0 h(e_bit)) - zeta - zeta',

clamped at zero, where h is the binary entropy.

The logarithm in -log eps is natural by default; 2 may be selected for
sensitivity checks (the concentration bound is exponential-family in e, but
the source convention is not spelled out anywhere authoritative).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .channel import channel_point, expected_counts
from .params import (EpsilonBudget, ExperimentConfig, ObservedCounts,
                     ProtocolParams, Variant, epsilon_budget, validate)
from .photon_stats import (DecoyCoefficients, lambda_four_phase,
                           lambda_two_phase)

# (1-p) K must exceed this multiple of -log eps before the approximate
# concentration bound is trustworthy.
M_BOUND_REGIME_FACTOR = 100.0


class BoundSign(Enum):
    PLUS = "plus"
    MINUS = "minus"


def binary_entropy(x: float) -> float:
    """Binary Shannon entropy in bits, with h(0) = h(1) = 0 by continuity."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"binary_entropy argument {x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def _minus_log(eps: float, log_base: float) -> float:
    return -math.log(eps) / math.log(log_base)


def m_bound(k: float, p: float, eps: float, sign: BoundSign,
            log_base: float = math.e) -> float:
    """Approximate concentration bound on the unobserved complement of a
    Bernoulli-sampled count.

    Given K observed successes of a p-coin over an unknown population, the
    remaining (1-p)-fraction is at most M_plus and at least M_minus except
    with probability eps.  M_minus is clamped at 0.
    """
    if p <= 0.0 or p > 1.0:
        raise ValueError(f"sampling probability p={p} outside (0, 1]")
    if k < 0:
        raise ValueError(f"count k={k} must be >= 0")
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps={eps} outside (0, 1)")
    mean = (1.0 - p) / p * k
    spread = math.sqrt(_minus_log(eps, log_base)) \
        * math.sqrt(2.0 * (1.0 - p)) / p * math.sqrt(k)
    if sign is BoundSign.PLUS:
        return mean + spread
    return max(mean - spread, 0.0)


def m_bound_in_regime(k: float, p: float, eps: float,
                      log_base: float = math.e) -> bool:
    """Whether (1-p) K is comfortably above -log eps."""
    return (1.0 - p) * k > M_BOUND_REGIME_FACTOR * _minus_log(eps, log_base)


@dataclass(frozen=True)
class FBound:
    """Closed-form bound on the phase-error count of the sifted key.

    Attributes:
        f_value: the bound itself (count scale).
        k1_even_plus: first-stage intermediate, K1 minus the lower bound on
            the mu2-like part hidden in the decoy1 count.
        nu: the combined fluctuation coefficient.
        decoy_consistent: False when K1 < (gamma pi / (p2^2 delta)) K2, i.e.
            the decoy counts contradict the model and the main term was
            clamped at zero (only fluctuations remain in f_value).
        in_regime: both concentration bounds inside their validity regime.
    """

    f_value: float
    k1_even_plus: float
    nu: float
    decoy_consistent: bool
    in_regime: bool


def f_bound(counts: ObservedCounts, coeffs: DecoyCoefficients,
            params: ProtocolParams, eps: float,
            variant: Variant = Variant.TWO_PHASE,
            log_base: float = math.e) -> FBound:
    """Phase-error-count bound from the decoy counts (closed form).

    Two-phase:

        f = (p0^2 p_even / lambda) (K1 - gamma pi/(p2^2 delta) K2
                                       + nu sqrt(-log(eps/2)))
        nu = sqrt(2 gamma (a + gamma))/a sqrt(K2)
             + sqrt(2 (1 + lambda/(p0^2 p_even))) sqrt(K1 - gamma/a K2),

    with a = p2^2 delta/pi.  The four-phase variant replaces the code-mode
    even weight p0^2 p_even by p0^2 p_even / 2 in both the prefactor and nu
    (its published form carries the pi factors inside the radical; the first
    fluctuation term is algebraically identical).
    """
    k1, k2 = counts.k1, counts.k2
    g, lam, pe = coeffs.gamma, coeffs.lambda_, coeffs.p_even
    a = params.p2 ** 2 * params.delta / math.pi
    log_term = math.sqrt(_minus_log(eps / 2.0, log_base))

    main = k1 - (g / a) * k2
    decoy_consistent = main >= 0.0
    main = max(main, 0.0)

    if variant is Variant.FOUR_PHASE:
        code_even = params.p0 ** 2 * pe / 2.0
        pp = params.p2 ** 2 * params.delta
        term_k2 = math.sqrt(2.0 * g * math.pi * (pp + g * math.pi)) / pp \
            * math.sqrt(k2)
    else:
        code_even = params.p0 ** 2 * pe
        term_k2 = math.sqrt(2.0 * g * (a + g)) / a * math.sqrt(k2)
    term_k1 = math.sqrt(2.0 * (1.0 + lam / code_even)) * math.sqrt(main)
    nu = term_k2 + term_k1

    f_value = (code_even / lam) * (main + nu * log_term)
    k1_even_plus = k1 - m_bound(k2, a / (a + g), eps / 2.0, BoundSign.MINUS,
                                log_base)
    in_regime = (m_bound_in_regime(k2, a / (a + g), eps / 2.0, log_base)
                 and m_bound_in_regime(max(k1_even_plus, 0.0),
                                       lam / (code_even + lam), eps / 2.0,
                                       log_base))
    return FBound(f_value=f_value, k1_even_plus=k1_even_plus, nu=nu,
                  decoy_consistent=decoy_consistent, in_regime=in_regime)


def f_bound_two_stage(counts: ObservedCounts, coeffs: DecoyCoefficients,
                      params: ProtocolParams, eps: float,
                      variant: Variant = Variant.TWO_PHASE,
                      log_base: float = math.e) -> float:
    """The same bound composed literally from the two M_pm stages.

    Differs from the closed form at higher order in the fluctuations (the
    closed form drops the first-stage fluctuation inside the second-stage
    square root); exposed for cross-validation, not used in optimization.
    """
    g, lam, pe = coeffs.gamma, coeffs.lambda_, coeffs.p_even
    a = params.p2 ** 2 * params.delta / math.pi
    code_even = params.p0 ** 2 * pe
    if variant is Variant.FOUR_PHASE:
        code_even /= 2.0
    k1_even_plus = counts.k1 - m_bound(counts.k2, a / (a + g), eps / 2.0,
                                       BoundSign.MINUS, log_base)
    return m_bound(max(k1_even_plus, 0.0), lam / (code_even + lam),
                   eps / 2.0, BoundSign.PLUS, log_base)


@dataclass(frozen=True)
class KeyRateResult:
    """Outcome of the finite-key evaluation at one operating point."""

    e_ph_upper: float
    f_value: float
    k1_even_plus: float
    g_bits: int
    rate_per_pulse: float
    h_ec_bits: int
    e_bit: float
    feasible: bool
    eps: EpsilonBudget

    def to_json_dict(self) -> dict:
        return {
            "e_ph_upper": self.e_ph_upper,
            "f_value": self.f_value,
            "k1_even_plus": self.k1_even_plus,
            "g_bits": self.g_bits,
            "rate_per_pulse": self.rate_per_pulse,
            "h_ec_bits": self.h_ec_bits,
            "e_bit": self.e_bit,
            "feasible": self.feasible,
            "eps_sct": self.eps.eps_sct,
            "eps_cor": self.eps.eps_cor,
            "eps_sec": self.eps.eps_sec,
        }


def key_length(counts: ObservedCounts, f_value: float | FBound,
               config: ExperimentConfig) -> KeyRateResult:
    """Final key length G and its epsilon budget.

    Infeasible (G clamped to 0) when the phase-error bound reaches 1/2, the
    bit error rate does, or the budget arithmetic leaves nothing.
    """
    fb = f_value if isinstance(f_value, FBound) else None
    f_val = fb.f_value if fb is not None else float(f_value)
    if f_val < 0:
        raise ValueError(f"f_value={f_val} must be >= 0")
    eps = epsilon_budget(config)
    k0 = counts.k0
    e_bit = counts.e_bit
    k1_even_plus = fb.k1_even_plus if fb is not None else math.nan

    e_ph = f_val / k0 if k0 > 0 else math.inf
    if k0 <= 0 or e_ph >= 0.5 or e_bit > 0.5:
        return KeyRateResult(
            e_ph_upper=e_ph, f_value=f_val, k1_even_plus=k1_even_plus,
            g_bits=0, rate_per_pulse=0.0, h_ec_bits=0, e_bit=e_bit,
            feasible=False, eps=eps)

    h_ec = math.ceil(config.f_cor * k0 * binary_entropy(e_bit))
    g_real = (k0 - math.ceil(k0 * binary_entropy(e_ph)) - h_ec
              - config.zeta - config.zeta_prime)
    g_bits = max(int(math.floor(g_real)), 0)
    return KeyRateResult(
        e_ph_upper=e_ph, f_value=f_val, k1_even_plus=k1_even_plus,
        g_bits=g_bits, rate_per_pulse=g_bits / config.n_tot,
        h_ec_bits=h_ec, e_bit=e_bit, feasible=g_bits > 0, eps=eps)


def evaluate_params(params: ProtocolParams, config: ExperimentConfig,
                    distance_km: float, log_base: float = math.e,
                    check: bool = True) -> KeyRateResult:
    """Full analytic pipeline: channel model -> expected counts -> decoy
    coefficients -> phase-error bound -> key length."""
    if check:
        validate(params).raise_if_invalid()
    point = channel_point(distance_km, config, params.delta)
    counts = expected_counts(params, config, point)
    if config.variant is Variant.FOUR_PHASE:
        _, coeffs = lambda_four_phase(params, check=False)
    else:
        _, coeffs = lambda_two_phase(params, check=False)
    fb = f_bound(counts, coeffs, params, config.epsilon,
                 variant=config.variant, log_base=log_base)
    return key_length(counts, fb, config)
