"""Command-line driver: ``msexit <subcommand> --config PATH --out DIR``.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 invariant violation, 5 statistical tolerance not met.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import (BlowUpError, BudgetError, ConfigurationError, DomainError,
                     ExtrapolationError, MsexitError, NoExitError, PreconditionError,
                     SingularIntegrandError, SolverError, TangencyError, UnsolvableError,
                     UnsupportedRegimeError)
from .harness import Check, EnsembleReport, _run_homogenize, run_ensemble
from .homogenize import check_centering, homogenize, invariant_measure
from .torus import TorusGrid

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT, EXIT_TOLERANCE = 0, 2, 3, 4, 5

SUBCOMMANDS = {
    "homogenize": None,
    "fluctuations": "fluctuation",
    "exit-law": "exit",
    "rough-potential": "conditional_exit",
    "scale-speed": "scale_speed",
}


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, UnsolvableError):
        return EXIT_INVARIANT
    if isinstance(exc, (ConfigurationError, DomainError, ExtrapolationError, BudgetError)):
        return EXIT_CONFIG
    if isinstance(exc, (PreconditionError, TangencyError, UnsupportedRegimeError,
                        SingularIntegrandError)):
        return EXIT_INVARIANT
    if isinstance(exc, (SolverError, BlowUpError, NoExitError, FloatingPointError)):
        return EXIT_SOLVER
    return EXIT_SOLVER


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


class _Out:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, line: str) -> None:
        if not self.quiet:
            print(line)


def _check_lines(checks, say) -> None:
    for c in checks:
        say(c.line())


def cmd_homogenize(config: ExperimentConfig, out: Path, say) -> int:
    cm = config.coefficients()
    coeffs = cm.coefficient_set()
    torus = TorusGrid(cm.period, config.torus_points)
    xs = config.x_grid()
    if coeffs.regime_index == 1:
        worst = 0.0
        for x in xs:
            mu = invariant_measure(coeffs, 1, float(x), torus)
            worst = max(worst, abs(check_centering(coeffs, float(x), mu)))
        scale = max(1.0, float(np.max(np.abs(cm.b(xs[:, None], torus.nodes[None, :])))))
        if worst > 1e-8 * scale:
            check = Check("centering residual", worst, 1e-8 * scale, False)
            _write(out / "report.json", _dump({"kind": "homogenize", "passed": False,
                                               "config_hash": config.config_hash,
                                               "centering_residual": worst,
                                               "checks": [check.to_json()]}))
            say(check.line())
            return EXIT_INVARIANT
    model, checks = _run_homogenize(config)
    _write(out / "model.json", model.dumps() + "\n")
    passed = all(c.passed for c in checks)
    _write(out / "report.json", _dump({"kind": "homogenize", "config_hash": config.config_hash,
                                       "residuals": model.residuals,
                                       "tolerances": model.tolerances,
                                       "checks": [c.to_json() for c in checks],
                                       "passed": passed}))
    _check_lines(checks, say)
    return EXIT_OK if passed else EXIT_INVARIANT


def _write_model(config: ExperimentConfig, out: Path) -> None:
    if "coefficients" in config.doc and "x_grid" in config.doc:
        cm = config.coefficients()
        model = homogenize(cm.coefficient_set(), config.x_grid(),
                           TorusGrid(cm.period, config.torus_points))
        _write(out / "model.json", model.dumps() + "\n")


def _statistical(config: ExperimentConfig, out: Path, say) -> int:
    report: EnsembleReport = run_ensemble(config)
    _write(out / "report.json", report.dumps())
    if report.blocks:
        _write(out / "samples.csv", report.samples_csv())
    if config.kind in ("fluctuation", "exit"):
        _write_model(config, out)
    if config.kind == "conditional_exit":
        m = report.metadata
        say(f"rare endpoint: {m['rare_endpoint']} (x = {m['rare_endpoint_value']:g})")
        say(f"predicted T = {m['T']:.6g}, predicted variance = {m['predicted_variance']:.6g}")
    for b in report.blocks:
        st = b.statistics()
        say(f"eps={b.epsilon:g}: mean {st['mean']:.5g} +- {st['mean_se']:.3g}, "
            f"variance {st['variance']:.5g} (predicted {b.predicted.get('mean', math.nan):.5g}, "
            f"{b.predicted.get('variance', math.nan):.5g})")
    if config.kind == "scale_speed":
        m = report.metadata
        rows = "".join(f"{d!r},{v!r}\n" for d, v in zip(m["deltas"], m["distances"]))
        _write(out / "samples.csv", "delta,sup_distance\n" + rows)
    say(f"wall time {report.wall_time:.1f} s")
    _check_lines(report.all_checks(), say)
    if report.passed:
        return EXIT_OK
    return EXIT_INVARIANT if config.kind == "scale_speed" else EXIT_TOLERANCE


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msexit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, default=None, help="override the master seed")
        s.add_argument("--quiet", action="store_true", help="suppress PASS/FAIL lines")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    say = _Out(args.quiet)
    try:
        config = ExperimentConfig.load(args.config, args.seed)
        want = SUBCOMMANDS[args.command]
        if want is not None and config.kind != want:
            raise ConfigurationError(f"'{args.command}' needs a config of kind '{want}', "
                                     f"got '{config.kind}'")
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigurationError(f"cannot create output directory: {exc}") from exc
        if not os.access(out, os.W_OK):
            raise ConfigurationError(f"output directory {out} is not writable")
        if args.command == "homogenize":
            return cmd_homogenize(config, out, say)
        return _statistical(config, out, say)
    except MsexitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
