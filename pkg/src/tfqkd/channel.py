"""Analytic detection model: transmittance, misalignment, counting rates.

The measurement station sits halfway between the parties, so each arm sees
half the fiber.  Counting rates follow the standard linear loss model with
exclusive single-detector clicks; the decoy rate treats the two detectors as
independently illuminated with intensity eta*mu_i each (no interference
term), matching the model the rate formulas are derived in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .params import ExperimentConfig, ObservedCounts, ProtocolParams, Variant


def transmittance(distance_km: float, eta_d: float,
                  loss_db_per_km: float) -> float:
    """One-arm transmittance: 10^(-loss * L / 20) * eta_d.

    L is the full Alice-Bob separation; each arm spans L/2 of fiber.
    """
    if distance_km < 0:
        raise ValueError(f"distance {distance_km} km must be >= 0")
    return 10.0 ** (-loss_db_per_km * distance_km / 20.0) * eta_d


def e_mis(delta: float) -> float:
    """Phase-slice mismatch error: the average of sin^2(d/2) over the
    residual phase offset d, uniform on [-delta/2, delta/2].

    Closed form of (1/delta) * integral sin^2(d/2) dd, namely
    1/2 - sin(delta/2)/delta.
    """
    if not 0.0 < delta <= math.pi:
        raise ValueError(f"delta={delta} outside (0, pi]")
    return 0.5 - math.sin(delta / 2.0) / delta


@dataclass(frozen=True)
class ChannelPoint:
    """Channel-derived quantities at one distance for one slice width."""

    distance_km: float
    eta: float
    e_mis: float
    e_m: float


def channel_point(distance_km: float, config: ExperimentConfig,
                  delta: float) -> ChannelPoint:
    """Bundle transmittance and misalignment for a distance and slice width."""
    mis = e_mis(delta)
    return ChannelPoint(
        distance_km=distance_km,
        eta=transmittance(distance_km, config.eta_d, config.loss_db_per_km),
        e_mis=mis,
        e_m=config.e_d + (1.0 - config.e_d) * mis)


class CodeRates(NamedTuple):
    q_corr: float
    q_err: float
    q_mu: float
    e_bit: float
    degenerate: bool


def code_rates(eta: float, mu: float, e_m: float, p_d: float) -> CodeRates:
    """Code-mode counting rates for correct and erroneous sifted bits.

    Q_corr is the probability that only the detector matching the bit
    relation clicks, Q_err the probability that only the opposite one does.
    At q_mu = 0 (no light, no dark counts) e_bit is reported as 0 with the
    degenerate flag set.
    """
    survive = 1.0 - p_d
    wrong_arm = math.exp(-2.0 * eta * mu * e_m)
    right_arm = math.exp(-2.0 * eta * mu * (1.0 - e_m))
    q_corr = survive * wrong_arm * (1.0 - survive * right_arm)
    q_err = survive * right_arm * (1.0 - survive * wrong_arm)
    q_mu = q_corr + q_err
    if q_mu == 0.0:
        return CodeRates(q_corr, q_err, q_mu, 0.0, True)
    return CodeRates(q_corr, q_err, q_mu, q_err / q_mu, False)


def decoy_rate(eta: float, mu_i: float, p_d: float) -> float:
    """Counting rate when both parties send the same decoy intensity mu_i:
    2 (1-p_d) e^{-eta mu_i} (1 - (1-p_d) e^{-eta mu_i}).

    mu_i = 0 reduces to the exclusive dark-count click rate 2 p_d (1-p_d),
    which is also the vacuum-decoy count rate.
    """
    survive = 1.0 - p_d
    quiet = math.exp(-eta * mu_i)
    return 2.0 * survive * quiet * (1.0 - survive * quiet)


def expected_counts(params: ProtocolParams, config: ExperimentConfig,
                    point: ChannelPoint) -> ObservedCounts:
    """Expected detection frequencies (real-valued, un-rounded).

    The four-phase variant halves the code-mode yield (half the rounds pair
    mismatched encoding sets); decoy yields are variant-independent.  The
    caller is responsible for building `point` from `params.delta`.
    """
    n = config.n_tot
    frac = params.delta / math.pi
    rates = code_rates(point.eta, params.mu, point.e_m, config.p_d)
    k0 = n * params.p0 ** 2 * rates.q_mu
    if config.variant is Variant.FOUR_PHASE:
        k0 *= 0.5
    k10 = n * params.p10 ** 2 * decoy_rate(point.eta, 0.0, config.p_d)
    k11 = n * params.p11 ** 2 * frac * decoy_rate(point.eta, params.mu1,
                                                  config.p_d)
    k2 = n * params.p2 ** 2 * frac * decoy_rate(point.eta, params.mu2,
                                                config.p_d)
    return ObservedCounts(k0=k0, k10=k10, k11=k11, k2=k2,
                          err0=k0 * rates.e_bit)
