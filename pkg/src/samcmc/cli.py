"""Command-line front end.

Subcommands: validate (schedule check, exit 0 iff every clause passes),
run-samc, run-samle, oracle (exact quantities for a finite chain), and
efficiency (replication study of the averaged estimator).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .harness import (
    ConfigError,
    load_chain,
    load_config,
    run_replications,
    run_single,
    write_outputs,
)
from .oracle import exact_omega, jacobian, mean_field, noise_covariance, theta_star
from .sa import ScheduleValidationError, validate_schedule


def _fmt_vec(v) -> str:
    return "[" + ", ".join(format(float(x), ".12g") for x in np.atleast_1d(v)) + "]"


def _fmt_mat(m) -> str:
    m = np.atleast_2d(m)
    return "\n".join("    " + _fmt_vec(row) for row in m)


def _load(config_path: str):
    """Shared config loading with CLI-grade error reporting."""
    try:
        return load_config(config_path), 0
    except ScheduleValidationError as exc:
        print(exc.report, file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return None, 1
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None, 2


def _cmd_validate(args) -> int:
    try:
        config = load_config(args.config)
    except ScheduleValidationError as exc:
        print(exc.report)
        return 1
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(validate_schedule(config.schedule))
    return 0


def _cmd_run(args, mode: str) -> int:
    config, rc = _load(args.config)
    if config is None:
        return rc
    if config.mode != mode:
        print(f"error: config mode is {config.mode!r}, expected {mode!r}",
              file=sys.stderr)
        return 2
    trace, summary = run_single(config)
    paths = write_outputs(trace, config.output_dir, summary=summary)
    print(f"seed {trace.seed}: {trace.k} iterations, "
          f"{len(trace.sigma_events)} truncation events")
    print(f"theta_bar (k0={summary['k0']}): "
          f"{_fmt_vec(summary['theta_bar_burnin'])}")
    if "omega_hat" in summary:
        print(f"omega_hat: {_fmt_vec(summary['omega_hat'])}")
        print(f"pi_hat:    {_fmt_vec(summary['pi_hat'])}")
    if "y_bar" in summary:
        print(f"y_bar (exact MLE): {summary['y_bar']:.12g}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def _cmd_oracle(args) -> int:
    config, rc = _load(args.config)
    if config is None:
        return rc
    chain = load_chain(config)
    omega = exact_omega(chain)
    tstar = theta_star(omega, chain.pi)
    zero = np.zeros(chain.m - 1)
    nc = noise_covariance(chain, tstar)
    print(f"omega:      {_fmt_vec(omega)}")
    print(f"theta_star: {_fmt_vec(tstar)}")
    print(f"h(0):       {_fmt_vec(mean_field(zero, omega, chain.pi))}")
    print("F(theta_star):")
    print(_fmt_mat(jacobian(tstar, omega, chain.pi)))
    print("Q(theta_star):")
    print(_fmt_mat(nc.q_matrix))
    print("Gamma:")
    print(_fmt_mat(nc.gamma))
    return 0


def _cmd_efficiency(args) -> int:
    config, rc = _load(args.config)
    if config is None:
        return rc
    try:
        report = run_replications(config)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    paths = write_outputs(report, config.output_dir)
    print(f"replications: {report.replications}, k_max: {report.k_max}")
    print("empirical k*Cov(theta_bar):")
    print(_fmt_mat(report.empirical_cov))
    print("oracle Gamma:")
    print(_fmt_mat(report.oracle_gamma))
    print(f"frobenius_rel_err: {report.frobenius_rel_err:.6g}")
    print(f"trace ratio (averaged/last): "
          f"{np.trace(report.empirical_cov) / np.trace(report.last_iterate_cov):.6g}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="samcmc",
        description="Adaptive MCMC with trajectory averaging: run, validate, "
                    "and check experiments against exact finite-chain answers.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("validate", "check the gain schedule conditions and exit"),
        ("run-samc", "run one adaptive flat-histogram chain"),
        ("run-samle", "run one missing-data maximum likelihood chain"),
        ("oracle", "print exact quantities for the configured finite chain"),
        ("efficiency", "replication study against the exact limit covariance"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="path to a YAML experiment config")

    args = parser.parse_args(argv)
    if args.command == "validate":
        return _cmd_validate(args)
    if args.command == "run-samc":
        return _cmd_run(args, "samc")
    if args.command == "run-samle":
        return _cmd_run(args, "samle")
    if args.command == "oracle":
        return _cmd_oracle(args)
    return _cmd_efficiency(args)


if __name__ == "__main__":
    sys.exit(main())
