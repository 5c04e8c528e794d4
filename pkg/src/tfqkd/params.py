"""Protocol parameters, experiment configuration, and validity rules.

Every other module consumes the two value objects defined here:

* :class:`ProtocolParams` — the tuple Alice and Bob agree on before the run:
  code intensity ``mu``, decoy intensities ``mu1 > mu2``, the mode
  probabilities ``(p0, p10, p11, p2)`` and the phase-slice width ``delta``.
* :class:`ExperimentConfig` — fixed physical and security constants
  (pulse budget, detector properties, fiber loss, error-correction
  inefficiency and the epsilon bookkeeping).

All objects are immutable; all functions are pure.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, fields
from enum import Enum
from typing import NamedTuple

PROB_SUM_TOL = 1e-12

# Canonical simulation constants used throughout the numerical experiments.
PAPER_ETA_D = 0.3
PAPER_P_D = 1e-8
PAPER_E_D = 0.03
PAPER_LOSS_DB_PER_KM = 0.2
PAPER_F_COR = 1.1
PAPER_LOG2_EPSILON = -66
PAPER_ZETA = 66
PAPER_ZETA_PRIME = 32


class ParameterValidationError(ValueError):
    """Raised when a parameter set fails validation at a pipeline entry."""

    def __init__(self, report: "ValidityReport"):
        self.report = report
        super().__init__("; ".join(v.detail for v in report.violations))


class Variant(Enum):
    """Protocol flavor: plain two-phase code mode or the four-phase variant."""

    TWO_PHASE = "two-phase"
    FOUR_PHASE = "four-phase"


@dataclass(frozen=True)
class ProtocolParams:
    """The optimizable protocol parameter tuple.

    Attributes:
        mu: mean photon number of code pulses.
        mu1: larger decoy intensity.
        mu2: smaller decoy intensity.
        p0: probability of choosing code mode (per party, per round).
        p10: probability of the vacuum decoy.
        p11: probability of the mu1 decoy.
        p2: probability of the mu2 decoy.
        delta: phase-slice width in radians, 0 < delta <= pi.  Bob's code
            pulse carries a fluctuation uniform on [-delta/2, delta/2]; decoy
            rounds are postselected on |theta_a - theta_b| mod pi <= delta/2.
    """

    mu: float
    mu1: float
    mu2: float
    p0: float
    p10: float
    p11: float
    p2: float
    delta: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.mu, self.mu1, self.mu2, self.p0, self.p10, self.p11,
                self.p2, self.delta)


@dataclass(frozen=True)
class ExperimentConfig:
    """Fixed physical and security constants of a run.

    Attributes:
        n_tot: total number of pulse pairs sent (stored as float so that
            budgets like 1e18 read naturally; must be >= 1).
        eta_d: detector efficiency of the measurement station.
        p_d: dark count probability per detector per pulse.
        e_d: intrinsic misalignment error probability.
        loss_db_per_km: fiber attenuation.
        f_cor: error-correction inefficiency (>= 1).
        epsilon: failure probability of the phase-error-count bound.
        zeta: privacy-amplification slack bits.
        zeta_prime: error-verification hash bits.
        variant: two-phase or four-phase protocol flavor.
    """

    n_tot: float
    eta_d: float = PAPER_ETA_D
    p_d: float = PAPER_P_D
    e_d: float = PAPER_E_D
    loss_db_per_km: float = PAPER_LOSS_DB_PER_KM
    f_cor: float = PAPER_F_COR
    epsilon: float = 2.0 ** PAPER_LOG2_EPSILON
    zeta: int = PAPER_ZETA
    zeta_prime: int = PAPER_ZETA_PRIME
    variant: Variant = Variant.TWO_PHASE

    def __post_init__(self):
        for name in ("eta_d", "p_d", "e_d"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
        if self.n_tot < 1:
            raise ValueError(f"n_tot={self.n_tot} must be >= 1")
        if self.f_cor < 1.0:
            raise ValueError(f"f_cor={self.f_cor} must be >= 1")
        if self.zeta < 1 or self.zeta_prime < 1:
            raise ValueError("zeta and zeta_prime must be positive integers")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon={self.epsilon} outside (0, 1)")


@dataclass(frozen=True)
class ObservedCounts:
    """Detection tallies after sifting (integers from a simulation, real
    expectations from the analytic model).

    err0 counts sifted code bits where Alice's and Bob's keys disagree after
    Bob's right-detector flip.
    """

    k0: float
    k10: float
    k11: float
    k2: float
    err0: float

    @property
    def k1(self) -> float:
        return self.k10 + self.k11

    @property
    def e_bit(self) -> float:
        """Observed bit error rate of the sifted key (0 when k0 == 0)."""
        return self.err0 / self.k0 if self.k0 > 0 else 0.0

    def __post_init__(self):
        if min(self.k0, self.k10, self.k11, self.k2, self.err0) < 0:
            raise ValueError("counts must be nonnegative")
        if self.err0 > self.k0:
            raise ValueError("err0 cannot exceed k0")


@dataclass(frozen=True)
class ConstraintViolation:
    """One failed constraint: stable identifier, violation margin, message.

    The margin is the amount by which the constraint is missed (0.0 for a
    strict inequality failing exactly at equality).
    """

    constraint: str
    margin: float
    detail: str


@dataclass(frozen=True)
class ValidityReport:
    violations: tuple[ConstraintViolation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def names(self) -> tuple[str, ...]:
        return tuple(v.constraint for v in self.violations)

    def raise_if_invalid(self) -> None:
        if not self.ok:
            raise ParameterValidationError(self)


def validate(params: ProtocolParams) -> ValidityReport:
    """Check a parameter tuple against every protocol constraint.

    Returns an empty report iff the tuple is usable by the whole pipeline:
    positive fields, delta in (0, pi], probabilities summing to 1, the decoy
    ordering mu2 < mu1 <= 1, the series-convergence requirement mu < mu1 and
    the vacuum-weight floor that keeps the s=0 decoy coefficient positive.

    Non-finite inputs short-circuit into a single distinct diagnostic.
    """
    values = params.as_tuple()
    names = [f.name for f in fields(params)]
    bad = [n for n, v in zip(names, values) if not math.isfinite(v)]
    if bad:
        return ValidityReport((ConstraintViolation(
            "finite_fields", math.inf,
            f"non-finite fields: {', '.join(bad)}"),))

    violations: list[ConstraintViolation] = []

    for n, v in zip(names, values):
        if v <= 0.0:
            violations.append(ConstraintViolation(
                f"positive:{n}", -v, f"{n}={v} must be > 0"))
    if params.delta > math.pi:
        violations.append(ConstraintViolation(
            "delta_le_pi", params.delta - math.pi,
            f"delta={params.delta} exceeds pi"))

    psum = params.p0 + params.p10 + params.p11 + params.p2
    if abs(psum - 1.0) > PROB_SUM_TOL:
        violations.append(ConstraintViolation(
            "prob_sum_one", abs(psum - 1.0),
            f"probabilities sum to {psum}, not 1"))

    if params.mu2 >= params.mu1:
        violations.append(ConstraintViolation(
            "mu2_lt_mu1", params.mu2 - params.mu1,
            f"require mu2 < mu1, got mu2={params.mu2} >= mu1={params.mu1}"))
    if params.mu1 > 1.0:
        violations.append(ConstraintViolation(
            "mu1_le_1", params.mu1 - 1.0, f"mu1={params.mu1} exceeds 1"))
    if params.mu >= params.mu1:
        violations.append(ConstraintViolation(
            "mu_lt_mu1", params.mu - params.mu1,
            f"require mu < mu1 (series convergence), got mu={params.mu}"))

    # Vacuum-weight floor: (mu1-mu2)/mu2 < p10^2 / (p11^2 (delta/pi) e^{-2 mu1}).
    # Equivalent to q_0 > 0.  Only meaningful once the fields are positive.
    if not violations:
        lhs = (params.mu1 - params.mu2) / params.mu2
        rhs = params.p10 ** 2 / (
            params.p11 ** 2 * (params.delta / math.pi)
            * math.exp(-2.0 * params.mu1))
        if lhs >= rhs:
            violations.append(ConstraintViolation(
                "q0_positive", lhs - rhs,
                "decoy gap too wide: (mu1-mu2)/mu2 must stay below "
                f"p10^2/(p11^2 (delta/pi) e^(-2 mu1)) = {rhs:.6g}, got {lhs:.6g}"))

    return ValidityReport(tuple(violations))


class EpsilonBudget(NamedTuple):
    eps_sct: float
    eps_cor: float
    eps_sec: float


def epsilon_budget(config: ExperimentConfig) -> EpsilonBudget:
    """Compose the security failure probabilities of a run.

    eps_sct = sqrt(2) * sqrt(epsilon + 2^-zeta) covers the phase-error bound
    and privacy amplification; eps_cor = 2^-zeta' covers error verification;
    the run is eps_sec-secure with eps_sec = eps_sct + eps_cor.
    """
    eps_sct = math.sqrt(2.0) * math.sqrt(config.epsilon + 2.0 ** -config.zeta)
    eps_cor = 2.0 ** -config.zeta_prime
    return EpsilonBudget(eps_sct, eps_cor, eps_sct + eps_cor)


# --- configuration files ----------------------------------------------------
#
# Runs are driven by a flat JSON object.  Protocol-parameter keys (optional as
# a group; the optimizer supplies them otherwise):
#
#   mu, mu1, mu2, p0, p10, p11, p2, delta_over_pi
#
# Experiment keys (n_tot required, the rest default to the canonical
# constants):
#
#   n_tot, eta_d, p_d, e_d, loss_db_per_km, f_cor, log2_epsilon, zeta,
#   zeta_prime, variant ("two-phase" | "four-phase")
#
# delta is always exchanged as a fraction of pi to avoid radian-precision
# ambiguity in files.

PARAM_KEYS = ("mu", "mu1", "mu2", "p0", "p10", "p11", "p2", "delta_over_pi")
EXPERIMENT_KEYS = ("n_tot", "eta_d", "p_d", "e_d", "loss_db_per_km", "f_cor",
                   "log2_epsilon", "zeta", "zeta_prime", "variant")


@dataclass(frozen=True)
class RunConfig:
    """A resolved configuration: experiment constants plus optional params."""

    experiment: ExperimentConfig
    params: ProtocolParams | None
    raw: dict


def params_from_mapping(data: dict) -> ProtocolParams:
    missing = [k for k in PARAM_KEYS if k not in data]
    if missing:
        raise KeyError(f"missing parameter keys: {', '.join(missing)}")
    return ProtocolParams(
        mu=float(data["mu"]), mu1=float(data["mu1"]), mu2=float(data["mu2"]),
        p0=float(data["p0"]), p10=float(data["p10"]),
        p11=float(data["p11"]), p2=float(data["p2"]),
        delta=float(data["delta_over_pi"]) * math.pi)


def params_to_mapping(params: ProtocolParams) -> dict:
    data = {k: getattr(params, k)
            for k in ("mu", "mu1", "mu2", "p0", "p10", "p11", "p2")}
    data["delta_over_pi"] = params.delta / math.pi
    return data


def experiment_from_mapping(data: dict) -> ExperimentConfig:
    if "n_tot" not in data:
        raise KeyError("missing experiment key: n_tot")
    kwargs = {"n_tot": float(data["n_tot"])}
    for key in ("eta_d", "p_d", "e_d", "loss_db_per_km", "f_cor"):
        if key in data:
            kwargs[key] = float(data[key])
    if "log2_epsilon" in data:
        kwargs["epsilon"] = 2.0 ** float(data["log2_epsilon"])
    for key in ("zeta", "zeta_prime"):
        if key in data:
            kwargs[key] = int(data[key])
    if "variant" in data:
        kwargs["variant"] = Variant(data["variant"])
    return ExperimentConfig(**kwargs)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Load a JSON run configuration, applying CLI overrides before parsing."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top-level JSON value must be an object")
    unknown = sorted(set(data) - set(PARAM_KEYS) - set(EXPERIMENT_KEYS))
    if unknown:
        raise ValueError(f"{path}: unknown configuration keys: {unknown}")
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    params = None
    if any(k in data for k in PARAM_KEYS):
        params = params_from_mapping(data)
    return RunConfig(experiment=experiment_from_mapping(data), params=params,
                     raw=data)


def config_digest(raw: dict) -> str:
    """Stable hash of a resolved configuration mapping."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
