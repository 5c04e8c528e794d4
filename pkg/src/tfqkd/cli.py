"""Command-line interface.

Subcommands:

* ``rate``             — evaluate one parameter tuple at one distance.
* ``curve``            — optimized rate-distance sweep written as CSV.
* ``verify-dominance`` — eigenvalue certification of the decoy dominance
                         inequality.
* ``simulate``         — seeded Monte Carlo protocol run.

Exit codes: 0 success, 1 I/O or config parse failure, 2 validation failure
(including a failed dominance certificate), 3 internal numerical failure.

All randomness is injected through ``--seed``; reruns with the same config
and flags reproduce byte-identical outputs apart from manifest timestamps.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .channel import channel_point
from .dominance import verify_dominance
from .finite_key import evaluate_params, key_length, f_bound
from .montecarlo import SamplingModel, simulate
from .optimizer import (CURVE_CSV_HEADER, CurveSpec, curve_csv_row,
                        rate_curve)
from .params import (ParameterValidationError, ProtocolParams, RunConfig,
                     Variant, config_digest, load_config, params_from_mapping,
                     params_to_mapping, validate)
from .photon_stats import (SeriesConvergenceError, lambda_four_phase,
                           lambda_two_phase)

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


@dataclass(frozen=True)
class RunManifest:
    """Provenance record written alongside every file output."""

    command: str
    config_digest: str
    tool_version: str
    seed: int
    started: str
    finished: str
    outputs: tuple[str, ...]

    def to_json_dict(self) -> dict:
        return {
            "command": self.command,
            "config_digest": self.config_digest,
            "tool_version": self.tool_version,
            "seed": self.seed,
            "started": self.started,
            "finished": self.finished,
            "outputs": list(self.outputs),
        }


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, indent=2) + "\n")


def _default_threads() -> int:
    env = os.environ.get("TFQKD_THREADS")
    if env:
        return max(int(env), 1)
    return os.cpu_count() or 1


def _log_base(name: str) -> float:
    return math.e if name == "e" else 2.0


def _resolve_params(args, run: RunConfig) -> ProtocolParams:
    """Parameter resolution order: config file < --params file < inline."""
    mapping: dict = {}
    if run.params is not None:
        mapping.update(params_to_mapping(run.params))
    if getattr(args, "params", None):
        with open(args.params, "r", encoding="utf-8") as fh:
            mapping.update(json.load(fh))
    for key in ("mu", "mu1", "mu2", "p0", "p10", "p11", "p2",
                "delta_over_pi"):
        value = getattr(args, key, None)
        if value is not None:
            mapping[key] = value
    if not mapping:
        raise ParameterValidationError(validate(
            ProtocolParams(0, 0, 0, 0, 0, 0, 0, 0)))
    return params_from_mapping(mapping)


def _load(args) -> RunConfig:
    overrides = {}
    if getattr(args, "n_tot", None) is not None:
        overrides["n_tot"] = args.n_tot
    if getattr(args, "variant", None) is not None:
        overrides["variant"] = args.variant
    return load_config(args.config, overrides)


def cmd_rate(args) -> int:
    run = _load(args)
    params = _resolve_params(args, run)
    report = validate(params)
    if not report.ok:
        for violation in report.violations:
            print(f"invalid parameters [{violation.constraint}]: "
                  f"{violation.detail}", file=sys.stderr)
        return EXIT_VALIDATION
    config = run.experiment
    if config.variant is Variant.FOUR_PHASE:
        _, coeffs = lambda_four_phase(params, check=False)
    else:
        _, coeffs = lambda_two_phase(params, check=False)
    result = evaluate_params(params, config, args.distance,
                             log_base=_log_base(args.log_base), check=False)
    payload = {
        "distance_km": args.distance,
        "variant": config.variant.value,
        "params": params_to_mapping(params),
        "decoy_coefficients": coeffs.to_json_dict(),
        **result.to_json_dict(),
    }
    _emit(payload)
    return EXIT_OK


def cmd_curve(args) -> int:
    run = _load(args)
    config = run.experiment
    distances = []
    d = args.from_km
    while d <= args.to_km + 1e-9:
        distances.append(round(d, 9))
        d += args.step_km
    started = _utc_now()
    spec = CurveSpec(distances=tuple(distances), config=config,
                     seed=args.seed, log_base=_log_base(args.log_base))
    points = rate_curve(spec)

    out_path = args.out
    manifest_path = out_path + ".manifest.json"
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# manifest: {os.path.basename(manifest_path)}\n")
        writer = csv.writer(fh)
        writer.writerow(CURVE_CSV_HEADER + ("plob_bound",))
        for point in points:
            eta_tot = 10.0 ** (-config.loss_db_per_km
                               * point.distance_km / 10.0)
            plob = -math.log2(1.0 - eta_tot) if eta_tot < 1.0 else math.inf
            writer.writerow(curve_csv_row(point) + (plob,))
    manifest = RunManifest(
        command=" ".join(sys.argv[1:]), config_digest=config_digest(run.raw),
        tool_version=__version__, seed=args.seed, started=started,
        finished=_utc_now(), outputs=(out_path,))
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest.to_json_dict(), indent=2) + "\n")
    _emit({"rows": len(points), "out": out_path, "manifest": manifest_path})
    return EXIT_OK


def cmd_verify_dominance(args) -> int:
    run = _load(args)
    params = _resolve_params(args, run)
    report = validate(params)
    if not report.ok:
        for violation in report.violations:
            print(f"invalid parameters [{violation.constraint}]: "
                  f"{violation.detail}", file=sys.stderr)
        return EXIT_VALIDATION
    cert = verify_dominance(params, n_max=args.n_max,
                            delta_grid=args.grid, tol=args.tol,
                            lambda_scale=args.lambda_scale)
    _emit(cert.to_json_dict())
    return EXIT_OK if cert.passed else EXIT_VALIDATION


def cmd_simulate(args) -> int:
    run = _load(args)
    params = _resolve_params(args, run)
    report = validate(params)
    if not report.ok:
        for violation in report.violations:
            print(f"invalid parameters [{violation.constraint}]: "
                  f"{violation.detail}", file=sys.stderr)
        return EXIT_VALIDATION
    config = run.experiment
    point = channel_point(args.distance, config, params.delta)
    tally = simulate(params, config, point, args.rounds, args.seed,
                     model=SamplingModel(args.model), threads=args.threads,
                     trace_path=args.trace)
    payload = tally.to_json_dict()
    payload["distance_km"] = args.distance
    if args.evaluate:
        if config.variant is Variant.FOUR_PHASE:
            _, coeffs = lambda_four_phase(params, check=False)
        else:
            _, coeffs = lambda_two_phase(params, check=False)
        fb = f_bound(tally.counts, coeffs, params, config.epsilon,
                     variant=config.variant,
                     log_base=_log_base(args.log_base))
        payload["key_rate"] = key_length(tally.counts, fb,
                                         config).to_json_dict()
    _emit(payload)
    return EXIT_OK


def _add_param_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--params", help="JSON file with parameter keys")
    for key in ("mu", "mu1", "mu2", "p0", "p10", "p11", "p2"):
        parser.add_argument(f"--{key}", type=float)
    parser.add_argument("--delta-over-pi", dest="delta_over_pi", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tfqkd",
        description="Finite-key analysis and simulation of twin-field QKD "
                    "with partial phase postselection")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="JSON run configuration")
    common.add_argument("--n-tot", dest="n_tot", type=float,
                        help="override total pulse-pair count")
    common.add_argument("--variant", choices=[v.value for v in Variant],
                        help="override protocol variant")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=_default_threads())
    common.add_argument("--log-base", choices=("e", "2"), default="e",
                        help="log base of the concentration-bound exponent")

    p_rate = sub.add_parser("rate", parents=[common],
                            help="evaluate one tuple at one distance")
    p_rate.add_argument("--distance", type=float, required=True,
                        help="Alice-Bob separation in km")
    _add_param_flags(p_rate)
    p_rate.set_defaults(func=cmd_rate)

    p_curve = sub.add_parser("curve", parents=[common],
                             help="optimized rate-distance sweep")
    p_curve.add_argument("--from", dest="from_km", type=float, required=True)
    p_curve.add_argument("--to", dest="to_km", type=float, required=True)
    p_curve.add_argument("--step", dest="step_km", type=float, default=10.0)
    p_curve.add_argument("--out", required=True, help="output CSV path")
    p_curve.set_defaults(func=cmd_curve)

    p_dom = sub.add_parser("verify-dominance", parents=[common],
                           help="certify the decoy dominance inequality")
    p_dom.add_argument("--n-max", dest="n_max", type=int, default=20)
    p_dom.add_argument("--grid", type=int, default=9)
    p_dom.add_argument("--tol", type=float, default=1e-9)
    p_dom.add_argument("--lambda-scale", dest="lambda_scale", type=float,
                       default=1.0,
                       help="deliberately rescale lambda (testing aid)")
    _add_param_flags(p_dom)
    p_dom.set_defaults(func=cmd_verify_dominance)

    p_sim = sub.add_parser("simulate", parents=[common],
                           help="seeded Monte Carlo protocol run")
    p_sim.add_argument("--distance", type=float, required=True)
    p_sim.add_argument("--rounds", type=int, required=True)
    p_sim.add_argument("--model",
                       choices=[m.value for m in SamplingModel],
                       default=SamplingModel.PAPER_FAITHFUL.value)
    p_sim.add_argument("--trace", help="binary round-trace output path")
    p_sim.add_argument("--evaluate", action="store_true",
                       help="run the finite-key evaluation on the tally")
    _add_param_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParameterValidationError as exc:
        print(f"invalid parameters: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"I/O or configuration error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SeriesConvergenceError, np.linalg.LinAlgError,
            ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
