"""Round-by-round protocol simulation.

Each round draws modes, key bits, phases and detector clicks, then applies
announcement-time sifting: code rounds need exactly one click (and matching
encoding sets in the four-phase variant); decoy rounds need matching
intensities and, except for vacuum pairs, the phase postselection condition
|theta_a - theta_b| mod pi <= delta/2 (wraparound included).

Two click-sampling models are provided:

* ``paper-faithful`` draws the per-category single-click events directly
  from the analytic counting rates (two mutually exclusive single-click
  outcomes, remainder treated as no-click/double-click).  This reproduces
  the analytic model exactly and is what acceptance checks use.
* ``physical`` models the interferometer: total incident intensity
  I = 2 eta mu_bar splits between the detectors by the wrong-port fraction
  w(d) = e_d + (1 - e_d) sin^2(d/2) at phase difference d, and each detector
  clicks independently with 1 - (1 - p_d) e^{-I}.  For decoy pairs this
  keeps the interference term that the analytic decoy rate deliberately
  drops, so decoy yields differ from the analytic model (code-mode yields
  agree).

Rounds whose mode combination sifting always discards (mixed modes or mixed
intensities) skip click sampling entirely.

Determinism: rounds are processed in fixed-size chunks; chunk i draws from a
counter-based Philox stream keyed by (seed, i), so a tally depends only on
(parameters, config, channel point, n_rounds, seed, model) and never on the
worker count.  Chunk tallies are merged by integer addition.  The scalar
:func:`sample_round` path is the behavioral reference; :func:`simulate`
uses an equivalent vectorized implementation with its own draw layout.

The optional round trace is a little-endian binary log of 28-byte records:
mode_a u8, mode_b u8, bits u8 (kappa_a | kappa_b << 1, code-mode parties
only), clicks u8 (L | R << 1), theta_a f64, theta_b f64, delta_b f64.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum, IntEnum

import numpy as np

from .channel import ChannelPoint, code_rates, decoy_rate
from .params import (ExperimentConfig, ObservedCounts, ProtocolParams,
                     Variant, validate)

CHUNK_ROUNDS = 1 << 19  # fixed: results change if this changes

TRACE_DTYPE = np.dtype([("mode_a", "u1"), ("mode_b", "u1"), ("bits", "u1"),
                        ("clicks", "u1"), ("theta_a", "<f8"),
                        ("theta_b", "<f8"), ("delta_b", "<f8")])


class Mode(IntEnum):
    CODE = 0
    DECOY_VAC = 1
    DECOY_MU1 = 2
    DECOY_MU2 = 3


class Category(Enum):
    CODE0 = "code0"
    DECOY10 = "decoy10"
    DECOY11 = "decoy11"
    DECOY2 = "decoy2"
    DISCARDED = "discarded"


class SamplingModel(Enum):
    PAPER_FAITHFUL = "paper-faithful"
    PHYSICAL = "physical"


@dataclass(frozen=True)
class RoundOutcome:
    """Everything one round produced; sift fields filled by :func:`sift`."""

    mode_a: Mode
    mode_b: Mode
    kappa_a: int | None
    kappa_b: int | None
    theta_a: float
    theta_b: float
    delta_b: float
    click_l: bool
    click_r: bool
    set_a: int | None = None
    set_b: int | None = None
    retained: bool = False
    category: Category = Category.DISCARDED
    error: bool = False


def phase_distance(theta_a: float, theta_b: float) -> float:
    """Distance of |theta_a - theta_b| mod pi from {0, pi}: min(d, pi - d)."""
    d = abs(theta_a - theta_b) % math.pi
    return min(d, math.pi - d)


def _rng_for_chunk(seed: int, chunk_index: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, chunk_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _draw_mode(u: float, params: ProtocolParams) -> Mode:
    if u < params.p0:
        return Mode.CODE
    if u < params.p0 + params.p10:
        return Mode.DECOY_VAC
    if u < params.p0 + params.p10 + params.p11:
        return Mode.DECOY_MU1
    return Mode.DECOY_MU2


def sample_round(params: ProtocolParams, point: ChannelPoint,
                 config: ExperimentConfig, rng: np.random.Generator,
                 model: SamplingModel = SamplingModel.PAPER_FAITHFUL) \
        -> RoundOutcome:
    """Draw one protocol round (reference scalar implementation).

    Draw order: mode uniforms for both parties; code-mode key bits, encoding
    sets (four-phase) and Bob's phase fluctuation; decoy phases; then the
    model-specific click draws.
    """
    u_a = rng.random()
    u_b = rng.random()
    mode_a = _draw_mode(u_a, params)
    mode_b = _draw_mode(u_b, params)

    kappa_a = kappa_b = None
    set_a = set_b = None
    delta_b = 0.0
    theta_a = theta_b = 0.0
    four_phase = config.variant is Variant.FOUR_PHASE
    if mode_a is Mode.CODE:
        kappa_a = int(rng.integers(0, 2))
        if four_phase:
            set_a = int(rng.integers(0, 2))
    elif mode_a is not Mode.DECOY_VAC:
        theta_a = rng.random() * 2.0 * math.pi
    if mode_b is Mode.CODE:
        kappa_b = int(rng.integers(0, 2))
        if four_phase:
            set_b = int(rng.integers(0, 2))
        delta_b = rng.uniform(-params.delta / 2.0, params.delta / 2.0)
    elif mode_b is not Mode.DECOY_VAC:
        theta_b = rng.random() * 2.0 * math.pi

    outcome = RoundOutcome(
        mode_a=mode_a, mode_b=mode_b, kappa_a=kappa_a, kappa_b=kappa_b,
        theta_a=theta_a, theta_b=theta_b, delta_b=delta_b,
        click_l=False, click_r=False, set_a=set_a, set_b=set_b)

    if mode_a is not mode_b:
        return outcome  # sifting always discards mixed rounds; no clicks
    if model is SamplingModel.PAPER_FAITHFUL:
        return _clicks_paper(outcome, params, point, config, rng)
    return _clicks_physical(outcome, params, point, config, rng)


def _clicks_paper(outcome: RoundOutcome, params: ProtocolParams,
                  point: ChannelPoint, config: ExperimentConfig,
                  rng: np.random.Generator) -> RoundOutcome:
    u = rng.random()
    if outcome.mode_a is Mode.CODE:
        rates = code_rates(point.eta, params.mu, point.e_m, config.p_d)
        bits_equal = outcome.kappa_a == outcome.kappa_b
        if u < rates.q_corr:
            # the click that leaves the bits agreeing after Bob's flip
            return replace(outcome, click_l=bits_equal,
                           click_r=not bits_equal)
        if u < rates.q_corr + rates.q_err:
            return replace(outcome, click_l=not bits_equal,
                           click_r=bits_equal)
        return outcome
    mu_i = {Mode.DECOY_VAC: 0.0, Mode.DECOY_MU1: params.mu1,
            Mode.DECOY_MU2: params.mu2}[outcome.mode_a]
    rate = decoy_rate(point.eta, mu_i, config.p_d)
    if u < rate:
        return replace(outcome, click_l=u < rate / 2.0, click_r=u >= rate / 2.0)
    return outcome


def _clicks_physical(outcome: RoundOutcome, params: ProtocolParams,
                     point: ChannelPoint, config: ExperimentConfig,
                     rng: np.random.Generator) -> RoundOutcome:
    """Interferometric click sampling.

    The wrong-port fraction w(d) = e_d + (1-e_d) sin^2(d/2) is evaluated at
    the deviation d from the round's ideal interference condition, and feeds
    the port whose click would flip into a bit error: R when the key bits
    agree, L when they differ.  (Evaluating w at the raw phase difference
    instead would let the intrinsic misalignment vanish on anti-phase
    rounds, which contradicts the counting-rate model.)  Decoy pairs carry
    no bit semantics, so they use the raw-difference convention with L as
    the constructive port.
    """
    if outcome.mode_a is Mode.CODE:
        i_tot = 2.0 * point.eta * params.mu
        deviation = outcome.delta_b
        wrong_is_right_port = outcome.kappa_a == outcome.kappa_b
    elif outcome.mode_a is Mode.DECOY_VAC:
        i_tot = 0.0
        deviation = 0.0
        wrong_is_right_port = True
    else:
        mu_i = params.mu1 if outcome.mode_a is Mode.DECOY_MU1 else params.mu2
        i_tot = 2.0 * point.eta * mu_i
        deviation = outcome.theta_a - outcome.theta_b
        wrong_is_right_port = True
    w = config.e_d + (1.0 - config.e_d) * math.sin(deviation / 2.0) ** 2
    i_wrong = i_tot * w
    i_main = i_tot * (1.0 - w)
    i_left, i_right = (i_main, i_wrong) if wrong_is_right_port \
        else (i_wrong, i_main)
    survive = 1.0 - config.p_d
    p_left = 1.0 - survive * math.exp(-i_left)
    p_right = 1.0 - survive * math.exp(-i_right)
    return replace(outcome, click_l=rng.random() < p_left,
                   click_r=rng.random() < p_right)


def sift(outcome: RoundOutcome, params: ProtocolParams) -> RoundOutcome:
    """Apply announcement-time sifting; returns a completed outcome.

    Code rounds: both parties in code mode, exactly one click (and equal
    encoding sets when present); a right-detector click flips Bob's bit, and
    the round is an error when the bits disagree afterwards.  Decoy rounds:
    equal intensities, exactly one click, and (for non-vacuum) the mod-pi
    phase postselection.
    """
    single = outcome.click_l != outcome.click_r
    if not single or outcome.mode_a is not outcome.mode_b:
        return outcome
    if outcome.mode_a is Mode.CODE:
        if outcome.set_a != outcome.set_b:
            return outcome
        bob_bit = outcome.kappa_b ^ int(outcome.click_r)
        return replace(outcome, retained=True, category=Category.CODE0,
                       error=outcome.kappa_a != bob_bit)
    if outcome.mode_a is Mode.DECOY_VAC:
        return replace(outcome, retained=True, category=Category.DECOY10)
    if phase_distance(outcome.theta_a, outcome.theta_b) <= params.delta / 2.0:
        category = (Category.DECOY11 if outcome.mode_a is Mode.DECOY_MU1
                    else Category.DECOY2)
        return replace(outcome, retained=True, category=category)
    return outcome


@dataclass(frozen=True)
class SimTally:
    """Aggregated sifting results of a simulation run.

    The pairs_* fields are pre-click diagnostics: how many rounds had both
    parties pick the same mode, and how many of the non-vacuum decoy pairs
    satisfied the phase postselection (counted before any click condition,
    so the postselected fraction estimates delta/pi directly).
    """

    counts: ObservedCounts
    n_rounds: int
    rng_seed: int
    sampling_model: SamplingModel
    pairs_code: int
    pairs_vac: int
    pairs_mu1: int
    pairs_mu1_postselected: int
    pairs_mu2: int
    pairs_mu2_postselected: int

    def to_json_dict(self) -> dict:
        return {
            "k0": self.counts.k0,
            "k10": self.counts.k10,
            "k11": self.counts.k11,
            "k1": self.counts.k1,
            "k2": self.counts.k2,
            "err0": self.counts.err0,
            "n_rounds": self.n_rounds,
            "seed": self.rng_seed,
            "model": self.sampling_model.value,
            "pairs_code": self.pairs_code,
            "pairs_vac": self.pairs_vac,
            "pairs_mu1": self.pairs_mu1,
            "pairs_mu1_postselected": self.pairs_mu1_postselected,
            "pairs_mu2": self.pairs_mu2,
            "pairs_mu2_postselected": self.pairs_mu2_postselected,
        }


_TALLY_FIELDS = 11  # k0, k10, k11, k2, err0, then the six pair counters


def _chunk_tally(params: ProtocolParams, point: ChannelPoint,
                 config: ExperimentConfig, model: SamplingModel,
                 n: int, seed: int, chunk_index: int,
                 trace_file=None) -> np.ndarray:
    """Simulate one chunk; returns the 11 tally integers."""
    rng = _rng_for_chunk(seed, chunk_index)
    four_phase = config.variant is Variant.FOUR_PHASE
    half = params.delta / 2.0

    u_a = rng.random(n)
    u_b = rng.random(n)
    kappa_a = rng.integers(0, 2, n, dtype=np.uint8)
    kappa_b = rng.integers(0, 2, n, dtype=np.uint8)
    delta_b = rng.uniform(-half, half, n)
    theta_a = rng.random(n) * (2.0 * math.pi)
    theta_b = rng.random(n) * (2.0 * math.pi)

    edges = np.array([params.p0, params.p0 + params.p10,
                      params.p0 + params.p10 + params.p11])
    mode_a = np.searchsorted(edges, u_a, side="right").astype(np.uint8)
    mode_b = np.searchsorted(edges, u_b, side="right").astype(np.uint8)

    pair = mode_a == mode_b
    code_pair = pair & (mode_a == Mode.CODE)
    vac = pair & (mode_a == Mode.DECOY_VAC)
    m1 = pair & (mode_a == Mode.DECOY_MU1)
    m2 = pair & (mode_a == Mode.DECOY_MU2)

    d = np.abs(theta_a - theta_b) % math.pi
    phase_ok = np.minimum(d, math.pi - d) <= half

    if model is SamplingModel.PAPER_FAITHFUL:
        u_click = rng.random(n)
        rates = code_rates(point.eta, params.mu, point.e_m, config.p_d)
        corr = code_pair & (u_click < rates.q_corr)
        errs = code_pair & ~corr & (u_click < rates.q_corr + rates.q_err)
        bits_equal = kappa_a == kappa_b
        click_r = (corr & ~bits_equal) | (errs & bits_equal)
        click_l = (corr | errs) & ~click_r
        for mask, mu_i in ((vac, 0.0), (m1, params.mu1), (m2, params.mu2)):
            rate = decoy_rate(point.eta, mu_i, config.p_d)
            click_l |= mask & (u_click < rate / 2.0)
            click_r |= mask & (u_click >= rate / 2.0) & (u_click < rate)
        single = click_l ^ click_r
    else:
        u_left = rng.random(n)
        u_right = rng.random(n)
        i_tot = np.zeros(n)
        i_tot[code_pair] = 2.0 * point.eta * params.mu
        i_tot[m1] = 2.0 * point.eta * params.mu1
        i_tot[m2] = 2.0 * point.eta * params.mu2
        # w at the deviation from the ideal interference condition (Bob's
        # fluctuation for code pairs, raw difference for decoy pairs),
        # feeding the port whose click means a bit error; see
        # _clicks_physical.
        deviation = np.where(code_pair, delta_b, theta_a - theta_b)
        w = config.e_d + (1.0 - config.e_d) * np.sin(deviation / 2.0) ** 2
        i_wrong = i_tot * w
        i_main = i_tot * (1.0 - w)
        wrong_is_right_port = ~code_pair | (kappa_a == kappa_b)
        i_left = np.where(wrong_is_right_port, i_main, i_wrong)
        i_right = np.where(wrong_is_right_port, i_wrong, i_main)
        survive = 1.0 - config.p_d
        p_left = 1.0 - survive * np.exp(-i_left)
        p_right = 1.0 - survive * np.exp(-i_right)
        click_l = pair & (u_left < p_left)
        click_r = pair & (u_right < p_right)
        single = click_l ^ click_r

    if four_phase:
        set_a = rng.integers(0, 2, n, dtype=np.uint8)
        set_b = rng.integers(0, 2, n, dtype=np.uint8)
        code_retained = code_pair & single & (set_a == set_b)
    else:
        code_retained = code_pair & single

    err_mask = code_retained & (kappa_a != (kappa_b ^ click_r.astype(np.uint8)))

    k0 = int(np.count_nonzero(code_retained))
    err0 = int(np.count_nonzero(err_mask))
    k10 = int(np.count_nonzero(vac & single))
    k11 = int(np.count_nonzero(m1 & single & phase_ok))
    k2 = int(np.count_nonzero(m2 & single & phase_ok))

    if trace_file is not None:
        records = np.zeros(n, dtype=TRACE_DTYPE)
        records["mode_a"] = mode_a
        records["mode_b"] = mode_b
        code_a = mode_a == Mode.CODE
        code_b = mode_b == Mode.CODE
        records["bits"] = np.where(code_a, kappa_a, 0) \
            | (np.where(code_b, kappa_b, 0) << 1)
        records["clicks"] = click_l.astype(np.uint8) \
            | (click_r.astype(np.uint8) << 1)
        records["theta_a"] = np.where(mode_a >= Mode.DECOY_MU1, theta_a, 0.0)
        records["theta_b"] = np.where(mode_b >= Mode.DECOY_MU1, theta_b, 0.0)
        records["delta_b"] = np.where(code_b, delta_b, 0.0)
        records.tofile(trace_file)

    return np.array([
        k0, k10, k11, k2, err0,
        int(np.count_nonzero(code_pair)), int(np.count_nonzero(vac)),
        int(np.count_nonzero(m1)), int(np.count_nonzero(m1 & phase_ok)),
        int(np.count_nonzero(m2)), int(np.count_nonzero(m2 & phase_ok))],
        dtype=np.int64)


def simulate(params: ProtocolParams, config: ExperimentConfig,
             point: ChannelPoint, n_rounds: int, seed: int,
             model: SamplingModel = SamplingModel.PAPER_FAITHFUL,
             threads: int = 1, trace_path=None) -> SimTally:
    """Run n_rounds of the protocol and aggregate the sifted tallies.

    Streaming: memory use is bounded by the chunk size regardless of
    n_rounds.  Identical (inputs, seed) produce identical tallies; the
    thread count never changes the result (tracing forces sequential chunk
    order so the log stays in round order).
    """
    validate(params).raise_if_invalid()
    if n_rounds < 0:
        raise ValueError(f"n_rounds={n_rounds} must be >= 0")

    chunks = [(i, min(CHUNK_ROUNDS, n_rounds - start))
              for i, start in enumerate(range(0, n_rounds, CHUNK_ROUNDS))]
    totals = np.zeros(_TALLY_FIELDS, dtype=np.int64)

    if trace_path is not None:
        with open(trace_path, "wb") as fh:
            for index, size in chunks:
                totals += _chunk_tally(params, point, config, model, size,
                                       seed, index, trace_file=fh)
    elif threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for tally in pool.map(
                    lambda c: _chunk_tally(params, point, config, model,
                                           c[1], seed, c[0]),
                    chunks):
                totals += tally
    else:
        for index, size in chunks:
            totals += _chunk_tally(params, point, config, model, size,
                                   seed, index)

    counts = ObservedCounts(k0=int(totals[0]), k10=int(totals[1]),
                            k11=int(totals[2]), k2=int(totals[3]),
                            err0=int(totals[4]))
    return SimTally(counts=counts, n_rounds=n_rounds, rng_seed=seed,
                    sampling_model=model,
                    pairs_code=int(totals[5]), pairs_vac=int(totals[6]),
                    pairs_mu1=int(totals[7]),
                    pairs_mu1_postselected=int(totals[8]),
                    pairs_mu2=int(totals[9]),
                    pairs_mu2_postselected=int(totals[10]))
