"""
Command-line interface for sbm-spectra.

    python -m src <subcommand> [flags]

Artifacts go to stdout (or --out); logs and the resolved invocation go to
stderr. Exit codes: 0 success, 1 usage error, 2 numerical or model error.
Sampling subcommands require --seed; nothing is ever seeded from the clock.
"""

import argparse
import io
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import structlog

from .chebstats import cheb_coeffs, clt_mean_variance, sparse_prediction, tau
from .config import config, configure_logging
from .detect import TestConfig, closed_form_moments, estimate_rank, run_test
from .errors import ConfigError, ErrorCategory, SbmSpectraError, build_error_report, exit_code_for
from .formats import (
    cheb_coeffs_frame,
    dump_json,
    parse_params,
    probe_json,
    read_matrix,
    write_frame_csv,
    write_matrix,
    write_spectrum_csv,
)
from .function_registry import resolve
from .harness import (
    BBP_KINDS,
    SPARSE_KINDS,
    ExperimentKind,
    load_config,
    run_experiment,
    write_report,
)
from .metrics import metrics
from .model import (
    DeformationSpec,
    SbmParams,
    build_spike,
    deform,
    rescale,
    sample_adjacency,
    sample_cgsbm,
    sample_gaussian_cgsbm,
    validate_params,
)
from .spectral import eigenvalues, resolvent_probe

logger = structlog.get_logger()


class UsageParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with status 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ============================================================================
# Output helpers
# ============================================================================


def _emit_text(text: str, out: Optional[str]) -> None:
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def _emit_bytes(data: bytes, out: Optional[str]) -> None:
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()


def _emit_record(record: Dict[str, Any], args) -> None:
    if args.json:
        _emit_text(dump_json(record, versioned=True) + "\n", args.out)
    else:
        _emit_text("".join(f"{key} {value!r}\n" for key, value in record.items()), args.out)


def _load_matrix(source: str):
    if source == "-":
        return read_matrix(sys.stdin.buffer)
    return read_matrix(source)


def _params_from_args(args) -> SbmParams:
    if args.params:
        return parse_params(Path(args.params).read_text(encoding="utf-8"))
    if args.n is None or args.k is None:
        raise ConfigError("sample needs --params or --n and --k")
    raw: Dict[str, Any] = {"n": args.n, "k": args.k}
    if args.p_s is not None and args.p_d is not None:
        raw.update(p_s=args.p_s, p_d=args.p_d)
    elif args.p_a is not None and args.gamma is not None:
        raw.update(p_a=args.p_a, gamma=args.gamma)
    else:
        raise ConfigError("sample needs (--p-s, --p-d) or (--p-a, --gamma)")
    return validate_params(raw)


# ============================================================================
# Subcommand handlers
# ============================================================================


def cmd_sample(args) -> None:
    params = _params_from_args(args)
    if args.matrix == "adjacency":
        matrix = sample_adjacency(params, args.seed)
    elif args.matrix == "rescaled":
        matrix = rescale(sample_adjacency(params, args.seed), params, use_sigma_hat=args.sigma_hat)
    elif args.matrix == "gaussian":
        matrix = sample_gaussian_cgsbm(params, args.seed)
    else:
        matrix = sample_cgsbm(params, args.seed)
        if args.d:
            spec = DeformationSpec(tuple(args.d))
            basis = build_spike(params.n, max(params.k, spec.k + 1)).select(spec.k)
            matrix = deform(matrix, basis, spec)

    buffer = io.BytesIO()
    write_matrix(matrix, buffer, args.format)
    _emit_bytes(buffer.getvalue(), args.out)


def cmd_spectrum(args) -> None:
    spectrum = eigenvalues(_load_matrix(args.matrix))
    if args.json:
        _emit_text(dump_json({"eigenvalues": spectrum.values}, versioned=True) + "\n", args.out)
        return
    text = io.StringIO()
    write_spectrum_csv(spectrum, text)
    _emit_text(text.getvalue(), args.out)


def cmd_lss_test(args) -> None:
    cfg = TestConfig(k1=args.k1, k2=args.k2, gamma=args.gamma, p=args.p)
    outcome = run_test(_load_matrix(args.matrix), cfg)
    _emit_record(outcome.to_dict(), args)


def cmd_estimate_k(args) -> None:
    estimate = estimate_rank(_load_matrix(args.matrix), args.gamma, args.p)
    _emit_record(estimate.to_dict(), args)


def cmd_tau(args) -> None:
    f = resolve(args.f)
    if args.L is not None:
        coeffs = cheb_coeffs(f, args.L, args.grid)
        if args.json:
            record = {"f": args.f, "taus": list(coeffs.taus), "tail_bound": coeffs.tail_bound}
            _emit_text(dump_json(record, versioned=True) + "\n", args.out)
        else:
            text = io.StringIO()
            write_frame_csv(cheb_coeffs_frame(coeffs), text)
            _emit_text(text.getvalue(), args.out)
        return

    value = tau(f, args.ell, args.grid)
    if args.json:
        _emit_text(dump_json({"f": args.f, "ell": args.ell, "tau": value}, versioned=True) + "\n", args.out)
    else:
        _emit_text(f"{value!r}\n", args.out)


def cmd_predict(args) -> None:
    if args.n is not None:
        if not args.f:
            raise ConfigError("sparse prediction needs --f")
        params = SbmParams.create(args.n, 1, args.p, args.p)
        prediction = sparse_prediction(resolve(args.f), params, force_xi4_one=args.xi4_one)
        _emit_record(prediction.to_dict(), args)
        return

    if args.f:
        prediction = clt_mean_variance(resolve(args.f), args.k, args.gamma, args.p)
    else:
        prediction = closed_form_moments(args.k, args.gamma, args.p)
    _emit_record(prediction.to_dict(), args)


_KINDS_FOR = {
    "mc-bbp": BBP_KINDS,
    "mc-clt": (ExperimentKind.CLT_HISTOGRAM,),
    "mc-error": (ExperimentKind.ERROR_CURVE,),
    "mc-sparse": SPARSE_KINDS,
    "diag-locallaw": (ExperimentKind.LOCAL_LAW_PROBE,),
}


def cmd_experiment(args) -> None:
    if args.command == "diag-locallaw" and args.matrix:
        z = complex(args.z_re, args.z_im)
        probe = resolvent_probe(_load_matrix(args.matrix), z)
        _emit_text(probe_json(probe) + "\n", args.out)
        return
    if not args.config:
        raise ConfigError(f"{args.command} needs --config")

    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if overrides:
        cfg = load_config({**cfg.model_dump(mode="json"), **overrides})

    if cfg.kind not in _KINDS_FOR[args.command]:
        raise ConfigError(
            "Config kind does not match subcommand", kind=cfg.kind.value, command=args.command
        )
    logger.info("Resolved experiment config", command=args.command, config=cfg.resolved())

    report = run_experiment(cfg, width=args.threads, verbose=args.verbose)
    if args.out:
        write_report(report, args.out)
    else:
        _emit_text(report.to_json() + "\n", None)
    metrics.write_textfile()


# ============================================================================
# Parser
# ============================================================================


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", default=None, help="Write to this path instead of stdout")
    parser.add_argument("--json", action="store_true", help="Versioned JSON output")


def build_parser() -> UsageParser:
    parser = UsageParser(prog=config.APP_NAME, description="SBM spectra and LSS detection")
    parser.add_argument("--log-level", default=None)
    parser.add_argument("--log-format", choices=["json", "console"], default=None)
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    sample = sub.add_parser("sample", help="Sample a matrix")
    sample.add_argument("--seed", type=int, required=True)
    sample.add_argument("--params", default=None, help="Params JSON file")
    sample.add_argument("--n", type=int)
    sample.add_argument("--k", type=int)
    sample.add_argument("--p-s", dest="p_s", type=float)
    sample.add_argument("--p-d", dest="p_d", type=float)
    sample.add_argument("--p-a", dest="p_a", type=float)
    sample.add_argument("--gamma", type=float)
    sample.add_argument(
        "--matrix",
        choices=["adjacency", "rescaled", "cgsbm", "gaussian"],
        default="rescaled",
    )
    sample.add_argument("--d", type=float, nargs="+", help="Deformation strengths (cgsbm only)")
    sample.add_argument(
        "--sigma-hat",
        dest="sigma_hat",
        action="store_true",
        help="Rescale by sqrt(N p_a (1 - p_a)) instead of sigma (rescaled only)",
    )
    sample.add_argument("--format", choices=["binary", "csv"], default="binary")
    sample.add_argument("--out", default=None)
    sample.set_defaults(handler=cmd_sample)

    spectrum = sub.add_parser("spectrum", help="Eigenvalues of a matrix, descending")
    spectrum.add_argument("--matrix", default="-")
    _common(spectrum)
    spectrum.set_defaults(handler=cmd_spectrum)

    lss_test = sub.add_parser("lss-test", help="Test K = k1 against K = k2")
    lss_test.add_argument("--matrix", default="-")
    lss_test.add_argument("--k1", type=int, required=True)
    lss_test.add_argument("--k2", type=int, required=True)
    lss_test.add_argument("--gamma", type=float, required=True)
    lss_test.add_argument("--p", type=float, required=True)
    _common(lss_test)
    lss_test.set_defaults(handler=cmd_lss_test)

    estimate = sub.add_parser("estimate-k", help="Estimate the number of spikes")
    estimate.add_argument("--matrix", default="-")
    estimate.add_argument("--gamma", type=float, required=True)
    estimate.add_argument("--p", type=float, required=True)
    _common(estimate)
    estimate.set_defaults(handler=cmd_estimate_k)

    tau_parser = sub.add_parser("tau", help="Chebyshev coefficient(s) of a registry function")
    tau_parser.add_argument("--f", required=True)
    group = tau_parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--ell", type=int)
    group.add_argument("--L", type=int, help="All coefficients up to L, as CSV")
    tau_parser.add_argument("--grid", type=int, default=None)
    _common(tau_parser)
    tau_parser.set_defaults(handler=cmd_tau)

    predict = sub.add_parser("predict", help="Limiting mean and variance")
    predict.add_argument("--k", type=int, default=0)
    predict.add_argument("--gamma", type=float, default=0.0)
    predict.add_argument("--p", type=float, required=True)
    predict.add_argument("--f", default=None, help="Registry function; default phi_gamma closed form")
    predict.add_argument("--n", type=int, default=None, help="Sparse prediction at this N")
    predict.add_argument("--xi4-one", dest="xi4_one", action="store_true")
    _common(predict)
    predict.set_defaults(handler=cmd_predict)

    for name, summary in (
        ("mc-bbp", "BBP outlier experiment"),
        ("mc-clt", "Dense CLT histogram"),
        ("mc-error", "Detection error curve"),
        ("mc-sparse", "Sparse CLT or sparse mean"),
        ("diag-locallaw", "Local law probe"),
    ):
        experiment = sub.add_parser(name, help=summary)
        experiment.add_argument("--config", default=None, help="Experiment config JSON")
        experiment.add_argument("--seed", type=int, default=None, help="Override base_seed")
        experiment.add_argument("--trials", type=int, default=None)
        experiment.add_argument("--threads", type=int, default=None)
        experiment.add_argument("--verbose", action="store_true")
        experiment.add_argument("--out", default=None, help="Report path stem")
        if name == "diag-locallaw":
            experiment.add_argument("--matrix", default=None, help="Probe a single matrix")
            experiment.add_argument("--z-re", dest="z_re", type=float, default=3.0)
            experiment.add_argument("--z-im", dest="z_im", type=float, default=0.0)
        experiment.set_defaults(handler=cmd_experiment)

    return parser


def _subparser(parser: argparse.ArgumentParser, command: Optional[str]):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction) and command in action.choices:
            return action.choices[command]
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level, args.log_format)
    logger.info(
        "Invocation",
        command=args.command,
        args={k: v for k, v in vars(args).items() if k != "handler"},
        version=config.APP_VERSION,
    )

    try:
        try:
            config.validate_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        args.handler(args)
    except SbmSpectraError as exc:
        report = build_error_report(exc)
        if exc.category == ErrorCategory.USAGE:
            _subparser(parser, args.command).print_usage(sys.stderr)
        sys.stderr.write(dump_json(report.to_dict(), versioned=True) + "\n")
        logger.error("Command failed", command=args.command, error=report.error)
        return exit_code_for(exc)
    except OSError as exc:
        report = build_error_report(exc)
        sys.stderr.write(dump_json(report.to_dict(), versioned=True) + "\n")
        logger.error("Command failed", command=args.command, error=report.error)
        return 2
    return 0
