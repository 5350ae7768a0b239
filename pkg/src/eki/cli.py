"""Command-line front end.

Subcommands: run, repeat, compare, validate-field, validate-cem,
validate-tempering.  Configs are JSON files or named presets, with dotted
key=value overrides; a fully resolved copy is written next to the outputs.
Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import ConfigError, NumericalError
from .experiments import ExperimentConfig, apply_overrides, compare, config_from_dict, repeat, run
from .presets import PRESETS, preset_config

OUTPUT_ROOT_ENV = "EKI_OUTPUT_ROOT"


def _load_config(args) -> ExperimentConfig:
    if args.preset is not None and args.config is not None:
        raise ConfigError("give either --preset or --config, not both")
    if args.preset is not None:
        cfg = preset_config(args.preset)
    elif args.config is not None:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        with open(args.config) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
        cfg = config_from_dict(data)
    else:
        raise ConfigError("a --preset or --config is required")

    overrides = {}
    for item in args.override or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        overrides[key] = value
    if args.seed is not None:
        overrides["ensemble_seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        overrides["jobs"] = args.jobs
    return apply_overrides(cfg, overrides) if overrides else cfg


def _output_dir(args, default_name: str) -> str:
    if args.output is not None:
        return args.output
    root = os.environ.get(OUTPUT_ROOT_ENV, "eki-output")
    return os.path.join(root, default_name)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--preset", help=f"named preset, one of {sorted(PRESETS)}")
    parser.add_argument("--seed", type=int, help="override the ensemble seed")
    parser.add_argument("--jobs", type=int, help="parallel forward evaluations")
    parser.add_argument("--output", help="output directory")
    parser.add_argument(
        "-o", "--override", action="append", metavar="KEY=VALUE",
        help="dotted config override, e.g. controller.rho=0.7",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eki",
        description="Ensemble Kalman inversion with adaptive data-misfit regularisation",
    )
    sub = parser.add_subparsers(dest="command")

    p_run = sub.add_parser("run", help="one inversion run")
    _add_common(p_run)

    p_repeat = sub.add_parser("repeat", help="repeated runs over fresh initial ensembles")
    _add_common(p_repeat)

    p_cmp = sub.add_parser("compare", help="DMC vs LM on identical initial ensembles")
    _add_common(p_cmp)
    p_cmp.add_argument("--lm-rho", type=float, default=0.6)

    p_field = sub.add_parser("validate-field", help="Whittle-Matern field checks")
    p_field.add_argument("--grid", type=int, default=50)
    p_field.add_argument("--samples", type=int, default=2000)
    p_field.add_argument("--output", help="JSON report path")

    p_cem = sub.add_parser("validate-cem", help="complete-electrode-model physics checks")
    p_cem.add_argument("--elements", type=int, default=1936)
    p_cem.add_argument("--output", help="JSON report path")

    p_temp = sub.add_parser("validate-tempering", help="tempering theory checks")
    p_temp.add_argument("--output", help="JSON report path")

    return parser


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    out = _output_dir(args, "run")
    result = run(cfg, out)
    print(f"n_star={result.n_star} final_error={result.final.get('error'):.4f} "
          f"final_dm1={result.final['dm1']:.3f} -> {out}")
    return 0


def _cmd_repeat(args) -> int:
    cfg = _load_config(args)
    out = _output_dir(args, "repeat")
    summary = repeat(cfg, out)
    print(f"runs={summary.n_runs} n_star={summary.n_star_mean:.2f}+/-{summary.n_star_sd:.2f} "
          f"error={summary.error_mean:.4f}+/-{summary.error_sd:.4f} -> {out}")
    return 0


def _cmd_compare(args) -> int:
    cfg = _load_config(args)
    out = _output_dir(args, "compare")
    payload = compare(cfg, args.lm_rho, out)
    print(
        "dmc n_star={:.2f}  lm(rho={}) n_star={:.2f}  ratio={:.2f} -> {}".format(
            payload["dmc"]["n_star_mean"], args.lm_rho,
            payload["lm"]["n_star_mean"], payload["n_star_ratio_lm_over_dmc"], out,
        )
    )
    return 0


def _cmd_validate_field(args) -> int:
    from .validation import validate_fields

    report = validate_fields(grid_n=args.grid, n_samples=args.samples)
    return _finish_report(report, args.output)


def _cmd_validate_cem(args) -> int:
    from .validation import validate_cem

    report = validate_cem(elements=args.elements)
    return _finish_report(report, args.output)


def _cmd_validate_tempering(args) -> int:
    from .validation import validate_tempering

    report = validate_tempering()
    return _finish_report(report, args.output)


def _finish_report(report, output: str | None) -> int:
    text = json.dumps(report.as_dict(), indent=2)
    if output:
        os.makedirs(os.path.dirname(output) or ".", exist_ok=True)
        with open(output, "w") as fh:
            fh.write(text)
    print(text)
    return 0 if report.all_passed else 2


_COMMANDS = {
    "run": _cmd_run,
    "repeat": _cmd_repeat,
    "compare": _cmd_compare,
    "validate-field": _cmd_validate_field,
    "validate-cem": _cmd_validate_cem,
    "validate-tempering": _cmd_validate_tempering,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage()
        return 1
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
