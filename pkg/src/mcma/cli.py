"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 failed predictive check.
Defaults can come from an INI file (``--config``, section ``[mcma]``, keys
named like the long flags with dashes or underscores) and the default seed
from the ``MCMA_SEED`` environment variable.
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .classifiers import KINDS, TrainConfig
from .core import COCHRANE_DOMAINS, MCMAError, SyntheticParams
from .evaluation import SweepSpec, plot_data, reports_to_csv, run_replicated, wide_table
from .factor import PPCAConfig
from .ingest import ingest, write
from .pipeline import CheckFailed, MCMAConfig, fit_factor, run
from .synthgen import estimate_semisynth_params, generate_semisynthetic, generate_synthetic

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass(frozen=True)
class RunConfig:
    mode: str = "mcma"
    classifier: str = "mnlogit"
    k: int = 1
    threshold: float = 0.95
    holdout_fraction: float = 0.2
    check_replications: int = 200
    averaging: str = "per_rct"
    force: bool = False
    seed: int = 0
    ppca_method: str = "em"
    hyper: dict[str, Any] = field(default_factory=dict)

    def mcma_config(self) -> MCMAConfig:
        train = TrainConfig.from_dict({**self.hyper, "seed": self.seed})
        return MCMAConfig(self.k, self.threshold, self.holdout_fraction, self.check_replications, self.force,
                          self.averaging, self.seed, PPCAConfig(method=self.ppca_method, seed=self.seed), train)

    def to_dict(self) -> dict:
        return asdict(self)


def default_seed() -> int:
    raw = os.environ.get("MCMA_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"MCMA_SEED must be an integer, got {raw!r}") from None


def _parse_hyper(items) -> dict[str, Any]:
    known = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in known or key in ("seed", "standardize", "fixed_zero"):
            raise UsageError(f"bad hyperparameter override {item!r}")
        default = getattr(TrainConfig(), key)
        try:
            if isinstance(default, bool):
                out[key] = value.strip().lower() in ("1", "true", "yes")
            else:
                out[key] = type(default)(value)
        except ValueError:
            raise UsageError(f"bad value for {key}: {value!r}") from None
    return out


def _domains(arg: str | None):
    if arg is None:
        return None
    if arg == "cochrane":
        return COCHRANE_DOMAINS
    return tuple(s.strip() for s in arg.split(",") if s.strip())


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("basic", "mcma"), default="mcma")
    p.add_argument("--classifier", choices=KINDS, default="mnlogit")
    p.add_argument("--k", type=int, default=1, help="substitute confounder dimension")
    p.add_argument("--threshold", type=float, default=0.95, help="|r| at which a correlated domain is dropped")
    p.add_argument("--holdout-fraction", type=float, default=0.2)
    p.add_argument("--check-replications", type=int, default=200)
    p.add_argument("--averaging", choices=("per_rct", "mean_z"), default="per_rct")
    p.add_argument("--force", action="store_true", help="continue past a failed predictive check")
    p.add_argument("--ppca-method", choices=("em", "adamax"), default="em")
    p.add_argument("--set", dest="hyper", action="append", metavar="KEY=VALUE",
                   help="classifier hyperparameter override, repeatable")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--domains", default=None,
                   help="comma-separated domain names, or 'cochrane'; default: every rob_* column")
    p.add_argument("--format", dest="fmt", choices=("csv", "jsonl"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mcma", description="Deconfounded summary association from risk-of-bias data.")
    parser.add_argument("--version", action="version", version=f"mcma {__version__}")
    parser.add_argument("--config", default=None, help="INI file with a [mcma] section of flag defaults")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    gen = sub.add_parser("generate", help="write a synthetic or semi-synthetic dataset")
    gsub = gen.add_subparsers(dest="source", parser_class=_Parser)
    g1 = gsub.add_parser("synthetic")
    g1.add_argument("--n", type=int, default=1000)
    g1.add_argument("--d", type=int, default=10)
    g1.add_argument("--wu", type=float, default=2.0)
    g1.add_argument("--seed", type=int, default=None)
    g1.add_argument("--out", default=None, help="dataset path; default synthetic_<seed>.csv")
    g1.add_argument("--format", dest="fmt", choices=("csv", "jsonl"), default=None)
    g2 = gsub.add_parser("semisynthetic")
    g2.add_argument("source_file", help="real dataset used to estimate the generating rates")
    g2.add_argument("--n", type=int, default=100)
    g2.add_argument("--seed", type=int, default=None)
    g2.add_argument("--out", default=None)
    g2.add_argument("--format", dest="fmt", choices=("csv", "jsonl"), default=None)
    g2.add_argument("--domains", default=None)

    an = sub.add_parser("analyze", help="run Basic or MCMA and print a JSON report")
    an.add_argument("data")
    an.add_argument("--out", default=None)
    _add_run_options(an)

    ck = sub.add_parser("check", help="fit the factor model and run the predictive check only")
    ck.add_argument("data")
    ck.add_argument("--out", default=None)
    _add_run_options(ck)

    sw = sub.add_parser("sweep", help="replicated synthetic experiments")
    sw.add_argument("--axis", choices=("w_u", "N"), default="w_u")
    sw.add_argument("--values", type=_floats, default=(0.0, 1.0, 2.0))
    sw.add_argument("--n", type=int, default=1000)
    sw.add_argument("--d", type=int, default=10)
    sw.add_argument("--wu", type=float, default=2.0)
    sw.add_argument("--classifiers", type=_names, default=("mnlogit",))
    sw.add_argument("--modes", type=_names, default=("basic", "mcma"))
    sw.add_argument("--reps", type=int, default=10)
    sw.add_argument("--workers", type=int, default=None, help="default: available CPUs")
    sw.add_argument("--average", choices=("macro", "weighted"), default="macro")
    sw.add_argument("--no-force", action="store_true", help="skip replications whose check fails")
    sw.add_argument("--seed", type=int, default=None)
    sw.add_argument("--out-json", default=None)
    sw.add_argument("--out-csv", default=None)
    sw.add_argument("--plot-data", default=None, metavar="DIR", help="write per-figure CSV tables into DIR")

    rp = sub.add_parser("reproduce", help="canned experiment configurations")
    rp.add_argument("target", choices=("table1", "table2", "fig3", "fig456"))
    rp.add_argument("--seed", type=int, default=None)
    rp.add_argument("--reps", type=int, default=10)
    rp.add_argument("--workers", type=int, default=None)
    rp.add_argument("--fixture", default=None, help="18-RCT source file for table2; default: bundled fixture")
    rp.add_argument("--wide", action="store_true", help="print a mean±std table instead of CSV")
    rp.add_argument("--out", default=None)
    rp.add_argument("--plot-data", default=None, metavar="DIR")
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cp = configparser.ConfigParser()
    if not cp.read(known.config):
        raise UsageError(f"cannot read config file {known.config}")
    if not cp.has_section("mcma"):
        raise UsageError(f"{known.config}: missing [mcma] section")
    defaults = {}
    for key, value in cp.items("mcma"):
        key = key.replace("-", "_")
        if key in ("force", "no_force", "wide"):
            defaults[key] = cp.getboolean("mcma", key)
        elif key == "hyper":
            defaults[key] = [v.strip() for v in value.split(",") if v.strip()]
        else:
            defaults[key] = value
    actions = {}
    stack = [parser]
    while stack:
        p = stack.pop()
        for act in p._actions:
            if isinstance(act, argparse._SubParsersAction):
                stack.extend(act.choices.values())
            elif act.dest in defaults:
                actions.setdefault(act.dest, []).append((p, act))
    unknown = set(defaults) - set(actions)
    if unknown:
        raise UsageError(f"{known.config}: unknown keys {sorted(unknown)}")
    for dest, pairs in actions.items():
        for p, act in pairs:
            value = defaults[dest]
            if isinstance(value, str) and act.type is not None:
                value = act.type(value)
            p.set_defaults(**{dest: value})


def _seed(args) -> int:
    return args.seed if args.seed is not None else default_seed()


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _run_config(args) -> RunConfig:
    return RunConfig(args.mode, args.classifier, args.k, args.threshold, args.holdout_fraction,
                     args.check_replications, args.averaging, args.force, _seed(args), args.ppca_method,
                     _parse_hyper(args.hyper))


def _dataset_echo(ds, path) -> dict:
    return {"path": str(path), "n": ds.n, "d": ds.d, "domain_names": list(ds.bias.domain_names),
            "study_ids": list(ds.ids())}


def cmd_generate(args) -> int:
    seed = _seed(args)
    if args.source == "synthetic":
        params = SyntheticParams(args.n, args.d, args.wu, seed)
        ds, truth = generate_synthetic(params)
        out = Path(args.out or f"synthetic_{seed}.csv")
        write(ds, out, args.fmt)
        sidecar = {"schema_version": SCHEMA_VERSION, "params": params.to_dict(), **truth.to_dict()}
        Path(str(out) + ".truth.json").write_text(_dumps(sidecar))
    elif args.source == "semisynthetic":
        src = ingest(args.source_file, None, _domains(args.domains))
        params = estimate_semisynth_params(src, args.n, seed)
        ds = generate_semisynthetic(params)
        out = Path(args.out or f"semisynthetic_{seed}.csv")
        write(ds, out, args.fmt)
        Path(str(out) + ".params.json").write_text(_dumps({"schema_version": SCHEMA_VERSION,
                                                           "params": params.to_dict()}))
    else:
        raise UsageError("generate needs 'synthetic' or 'semisynthetic'")
    print(str(out), file=sys.stderr)
    return EXIT_OK


def cmd_analyze(args) -> int:
    rc = _run_config(args)
    ds = ingest(args.data, args.fmt, _domains(args.domains))
    result = run(ds, rc.mode, rc.classifier, rc.mcma_config())
    report = {"schema_version": SCHEMA_VERSION, "command": "analyze", "config": rc.to_dict(),
              "dataset": _dataset_echo(ds, args.data), "result": result.to_dict()}
    _emit(_dumps(report), args.out)
    return EXIT_OK


def cmd_check(args) -> int:
    rc = _run_config(args)
    ds = ingest(args.data, args.fmt, _domains(args.domains))
    cfg = replace(rc.mcma_config(), force=True)
    _, screen, check, model = fit_factor(ds.bias, cfg)
    report = {"schema_version": SCHEMA_VERSION, "command": "check", "config": rc.to_dict(),
              "dataset": _dataset_echo(ds, args.data), "screen": screen.to_dict(), "check": check.to_dict(),
              "factor": model.to_dict()}
    _emit(_dumps(report), args.out)
    return EXIT_OK if check.passed else EXIT_CHECK


def _write_sweep_outputs(spec, reports, seed, out_json=None, out_csv=None, plot_dir=None) -> str:
    csv_text = reports_to_csv(reports)
    if out_json:
        Path(out_json).write_text(_dumps({"schema_version": SCHEMA_VERSION, "spec": spec.to_dict(),
                                          "base_seed": seed, "reports": [r.to_dict() for r in reports]}))
    if out_csv:
        Path(out_csv).write_text(csv_text)
    if plot_dir:
        Path(plot_dir).mkdir(parents=True, exist_ok=True)
        for name, text in plot_data(reports).items():
            (Path(plot_dir) / f"{name}.csv").write_text(text)
    return csv_text


def cmd_sweep(args) -> int:
    seed = _seed(args)
    for kind in args.classifiers:
        if kind not in KINDS:
            raise UsageError(f"unknown classifier {kind!r}")
    for mode in args.modes:
        if mode not in ("basic", "mcma"):
            raise UsageError(f"unknown mode {mode!r}")
    spec = SweepSpec(args.axis, args.values, SyntheticParams(args.n, args.d, args.wu, seed), args.classifiers,
                     args.modes, MCMAConfig(force=not args.no_force), args.average)
    reports = run_replicated(spec, args.reps, seed, args.workers)
    csv_text = _write_sweep_outputs(spec, reports, seed, args.out_json, args.out_csv, args.plot_data)
    if not args.out_csv:
        sys.stdout.write(csv_text)
    return EXIT_OK


def bundled_fixture() -> Path:
    return Path(str(resources.files("mcma") / "data" / "pde5_fixture.csv"))


def reproduce_spec(target: str, seed: int, fixture=None) -> SweepSpec:
    """Canned sweep configurations. Every MCMA run continues past a failed
    predictive check and records its score."""
    cfg = MCMAConfig(force=True)
    synth = SyntheticParams(1000, 10, 2.0, seed)
    if target == "table1":
        return SweepSpec("N", (1000,), synth, KINDS, config=cfg)
    if target == "fig3":
        values = tuple(round(0.2 * i, 1) for i in range(11))
        return SweepSpec("w_u", values, synth, ("mnlogit",), config=cfg)
    if target == "fig456":
        return SweepSpec("N", (100, 500, 1000), synth, KINDS, config=cfg)
    if target == "table2":
        src = ingest(fixture or bundled_fixture())
        return SweepSpec("N", (100,), estimate_semisynth_params(src, 100, seed), KINDS, config=cfg)
    raise UsageError(f"unknown target {target!r}")


def cmd_reproduce(args) -> int:
    seed = _seed(args)
    spec = reproduce_spec(args.target, seed, args.fixture)
    reports = run_replicated(spec, args.reps, seed, args.workers)
    csv_text = _write_sweep_outputs(spec, reports, seed, plot_dir=args.plot_data)
    _emit(wide_table(reports) if args.wide else csv_text, args.out)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "analyze": cmd_analyze, "check": cmd_check, "sweep": cmd_sweep,
            "reproduce": cmd_reproduce}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = build_parser()
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except CheckFailed as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CHECK
    except (MCMAError, OSError, np.linalg.LinAlgError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
