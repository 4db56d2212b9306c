"""Command-line entry point: ``fedncv {run,verify,sweep}``.

Exit codes: 0 success, 1 I/O or configuration error, 2 divergence,
3 verification failure.
"""

from __future__ import annotations

import argparse
import io
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import verify
from .config import ALGORITHMS, ALPHA_MODES, FIELD_TYPES, ConfigError, RunConfig, format_config, parse_config
from .data import DatasetFormatError
from .fedsim import Divergence, RoundMetrics, Simulation

EXIT_OK, EXIT_ERROR, EXIT_DIVERGED, EXIT_VERIFY_FAILED = 0, 1, 2, 3

CSV_COLUMNS = ("round", "algorithm", "seed", "train_loss", "test_accuracy",
               "grad_dispersion", "global_grad_norm", "alpha_mean", "beta")
METRIC_COLUMNS = CSV_COLUMNS[3:]

# flag -> config key
RUN_FLAGS = {
    "algorithm": "algorithm",
    "clients": "clients",
    "rounds": "rounds",
    "gamma": "gamma",
    "alpha_mode": "alpha_mode",
    "alpha": "fixed_alpha",
    "beta": "beta",
    "dirichlet": "dirichlet_concentration",
    "seed": "seed",
    "out": "out_path",
    "workers": "workers",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_ERROR)


def _num(text: str) -> float:
    return float(text)


def _run_options() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="key=value configuration file")
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("--clients", type=int, metavar="N")
    p.add_argument("--rounds", type=int, metavar="T")
    p.add_argument("--gamma", type=_num, metavar="F")
    p.add_argument("--alpha-mode", dest="alpha_mode", choices=ALPHA_MODES)
    p.add_argument("--alpha", type=_num, metavar="F", help="fixed alpha, and the starting alpha of the adaptive modes")
    p.add_argument("--beta", type=_num, metavar="F")
    p.add_argument("--dirichlet", type=_num, metavar="F", help="Dirichlet concentration of the label partition")
    p.add_argument("--seed", type=int, metavar="N")
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--workers", type=int, metavar="N", help="threads evaluating clients in parallel")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedncv", description="Federated learning with networked control variates.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _run_options()
    sub.add_parser("run", parents=[common], help="simulate one configured run and write a metrics CSV")
    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("suite", choices=sorted(verify.SUITES))
    v.add_argument("--seed", type=int, default=0)
    s = sub.add_parser("sweep", parents=[common], help="repeat a run over values of one numeric setting")
    s.add_argument("--vary", required=True, metavar="KEY")
    s.add_argument("--values", required=True, metavar="V1,V2,...")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    text, source = "", "config"
    if args.config:
        source = args.config
        text = Path(args.config).read_text()
    overrides = {key: getattr(args, flag) for flag, key in RUN_FLAGS.items() if getattr(args, flag) is not None}
    cfg = parse_config(text, overrides, source)
    print(format_config(cfg), file=sys.stderr)
    return cfg


def _fmt(value) -> str:
    return "%.10g" % value


def metrics_csv(cfg: RunConfig, metrics: Sequence[RoundMetrics]) -> str:
    buf = io.StringIO()
    for key, value in cfg.items():
        buf.write(f"# {key}={value}\n")
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for m in metrics:
        row = [str(m.round), cfg.algorithm, str(cfg.seed)] + [_fmt(getattr(m, c)) for c in METRIC_COLUMNS]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def write_text(path, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def simulate(cfg: RunConfig) -> tuple[list[RoundMetrics], bool]:
    """Run to completion; on divergence return the valid rounds and ``True``."""
    try:
        return Simulation(cfg).run(), False
    except Divergence as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return exc.metrics, True


def cmd_run(cfg: RunConfig) -> int:
    metrics, diverged = simulate(cfg)
    write_text(cfg.out_path, metrics_csv(cfg, metrics))
    return EXIT_DIVERGED if diverged else EXIT_OK


def cmd_verify(suite: str, seed: int = 0) -> int:
    checks = verify.SUITES[suite](seed)
    for check in checks:
        print(check.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY_FAILED


def _sweep_path(out: Path, key: str, value) -> Path:
    return out.with_name(f"{out.stem}_{key}-{value}{out.suffix or '.csv'}")


def cmd_sweep(cfg: RunConfig, vary: str, values: Sequence) -> int:
    """One CSV per value plus ``<out>_summary.csv`` with final-round metrics.

    ``test_accuracy_std`` is the sample standard deviation of the final test
    accuracy over rows that differ only in their seed; it is left empty when
    a row has no such siblings.
    """
    if FIELD_TYPES.get(vary) not in (int, float):
        raise ConfigError(f"--vary: {vary!r} is not a numeric setting")
    out = Path(cfg.out_path)
    rows, status = [], EXIT_OK
    for raw in values:
        run_cfg = parse_config("", {**dict(cfg.items()), vary: raw})
        run_cfg = run_cfg.replace(out_path=str(_sweep_path(out, vary, getattr(run_cfg, vary))))
        metrics, diverged = simulate(run_cfg)
        write_text(run_cfg.out_path, metrics_csv(run_cfg, metrics))
        if diverged:
            status = EXIT_DIVERGED
        rows.append((getattr(run_cfg, vary), metrics[-1] if metrics else None))

    final_acc = [m.test_accuracy for _, m in rows if m is not None]
    std = _fmt(np.std(final_acc, ddof=1)) if vary == "seed" and len(final_acc) >= 2 else ""
    lines = [",".join([vary, "rounds_completed", *METRIC_COLUMNS, "test_accuracy_std"])]
    for value, m in rows:
        if m is None:
            lines.append(",".join([str(value), "0"] + [""] * (len(METRIC_COLUMNS) + 1)))
        else:
            lines.append(",".join([str(value), str(m.round)] + [_fmt(getattr(m, c)) for c in METRIC_COLUMNS] + [std]))
    write_text(out.with_name(f"{out.stem}_summary{out.suffix or '.csv'}"), "\n".join(lines) + "\n")
    return status


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args.suite, args.seed)
        cfg = load_config(args)
        if args.command == "run":
            return cmd_run(cfg)
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        if not values:
            raise ConfigError("--values: no values given")
        return cmd_sweep(cfg, args.vary, values)
    except (ConfigError, DatasetFormatError, OSError) as exc:
        print(f"fedncv: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
