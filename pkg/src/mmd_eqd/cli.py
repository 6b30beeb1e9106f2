"""Command-line entry point: ``mmd-eqd {test,simulate,oracle-check}``.

Exit codes: 0 clean run, 1 oracle identity failure, 2 usage or validation
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .core import (SEED_ENV_VAR, Calibration, NumericalError, RngSeed, Schema, Splitting,
                   TestConfig, ValidationError, load_config_file, read_csv)
from .inference import run_test
from .nuisance import (Example, ExampleSpec, FittedNuisance, PropensityModel, make_regression,
                       split_indices)
from .oracle import run_identity_checks
from .simulation import RejectionTable, ScenarioSpec, run_experiment

EXIT_OK, EXIT_ORACLE, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("mmd_eqd")


class UsageError(ValidationError):
    pass


def _split_cols(value: str | None) -> list[str] | None:
    if value is None:
        return None
    return [c.strip() for c in value.split(",") if c.strip()]


def _csv_header(path: Path) -> list[str]:
    import csv
    with open(path, newline="") as fh:
        return [h.strip() for h in next(csv.reader(fh), [])]


def infer_schema(header: list[str], w=None, a=None, y=None, example: Example | None = None) -> Schema:
    """Explicit roles win; otherwise ``a``/``A`` is treatment, ``y*`` columns outcomes, the rest covariates."""
    if y is None:
        y = [c for c in header if c.lower().startswith("y")]
    if a is None and (example is None or example in (Example.CATE, Example.TWO_POP)):
        a = next((c for c in header if c in ("a", "A")), None)
    if w is None:
        taken = set(y) | ({a} if a else set())
        w = [c for c in header if c not in taken]
    return Schema(w=tuple(w), y=tuple(y), a=a)


def _config_sections(args) -> tuple[dict, dict]:
    if not args.config:
        return {}, {}
    raw = load_config_file(args.config)
    extra = {k: raw.pop(k) for k in ("example", "schema", "scenario") if k in raw}
    return raw, extra


def build_test_config(args, file_cfg: dict) -> TestConfig:
    cfg = TestConfig.from_dict(file_cfg)
    over = {}
    if args.alpha is not None:
        over["alpha"] = args.alpha
    if args.method is not None:
        over["calibration"] = Calibration(args.method)
    if args.bandwidth is not None:
        over["bandwidth"] = args.bandwidth
    if getattr(args, "split", False):
        over["sample_splitting"] = Splitting.TWO_FOLD
    if getattr(args, "mc_draws", None) is not None:
        over["mc_draws"] = args.mc_draws
    if getattr(args, "eigen_count", None) is not None:
        ec = args.eigen_count
        over["eigen_count"] = ec if ec.lower() == "all" else int(ec)
    env_seed = os.environ.get(SEED_ENV_VAR)
    if args.seed is not None:
        over["seed"] = RngSeed(args.seed)
    elif env_seed:
        over["seed"] = RngSeed(int(env_seed))
    return replace(cfg, **over) if over else cfg


def build_example_spec(args, section: dict) -> ExampleSpec:
    sec = dict(section)
    example = Example(args.example or sec.get("example", "ex3"))
    kind = args.regression or sec.get("regression", "ols")
    model = make_regression(kind, bandwidth=args.reg_bandwidth or sec.get("reg_bandwidth", 1.0),
                            k=args.knn_k or sec.get("knn_k", 10))
    prop_kind = args.propensity or sec.get("propensity", "known")
    floor = sec.get("propensity_floor", 0.01)
    if prop_kind == "logistic":
        prop = PropensityModel.logistic(floor)
    else:
        p = args.p_treat if args.p_treat is not None else sec.get("p_treat", 0.5)
        prop = PropensityModel.known(p, floor)
    return ExampleSpec(
        example=example, outcome_model=model, propensity_model=prop,
        clip_b=args.clip_b if args.clip_b is not None else sec.get("clip_b", 1.0),
        k=args.k if args.k is not None else sec.get("k", 0),
        p=args.p_artificial if args.p_artificial is not None else sec.get("p", 0.5),
    )


def cmd_test(args) -> int:
    file_cfg, extra = _config_sections(args)
    config = build_test_config(args, file_cfg)
    spec = build_example_spec(args, extra.get("example", {}) if isinstance(extra.get("example"), dict)
                              else {"example": extra["example"]} if "example" in extra else {})
    if not args.data:
        raise UsageError("--data is required for the test subcommand")
    data_path = Path(args.data)
    schema_sec = extra.get("schema", {})
    schema = infer_schema(
        _csv_header(data_path),
        w=_split_cols(args.w_cols) or schema_sec.get("W"),
        a=args.a_col or schema_sec.get("A"),
        y=_split_cols(args.y_cols) or schema_sec.get("Y"),
        example=spec.example,
    )
    data = read_csv(data_path, schema)
    if config.sample_splitting is Splitting.TWO_FOLD:
        fit_idx, eval_idx = split_indices(data.n, config.seed)
        nuisance = FittedNuisance(spec, data.subset(fit_idx))
        fe = nuisance.evaluate(data.subset(eval_idx), config.seed, config.bandwidth)
    else:
        nuisance = FittedNuisance(spec, data)
        fe = nuisance.evaluate(data, config.seed, config.bandwidth)
    result = run_test(fe, config)
    report = result.to_dict()
    report["config"] = config.to_dict()
    report["example"] = {"example": spec.example.value, "clip_b": spec.clip_b, "k": spec.k,
                         "p": spec.p}
    report["nuisance"] = nuisance.summary()
    report["schema"] = {"W": list(schema.w), "A": schema.a, "Y": list(schema.y)}
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    print(result.summary(), file=sys.stdout if args.out else sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    file_cfg, extra = _config_sections(args)
    config = build_test_config(args, file_cfg)
    sec = extra.get("scenario", {})
    reps = args.reps if args.reps is not None else sec.get("replications", 100)
    if reps < 1:
        raise UsageError("--reps must be at least 1")
    sizes = [int(v) for v in str(args.n if args.n is not None else sec.get("n", 500)).split(",")]
    table = RejectionTable()
    out_dir = Path(args.out) if args.out else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    for n in sizes:
        spec = ScenarioSpec(
            scenario=args.scenario or sec.get("scenario", "1a"),
            n=n,
            test=args.test or sec.get("test", "ex1"),
            replications=reps,
            seed=config.seed,
            beta=args.beta if args.beta is not None else sec.get("beta", 0.0),
            signal_coords=args.signal_coords if args.signal_coords is not None
            else sec.get("signal_coords", 0),
            bandwidth=args.bandwidth if args.bandwidth is not None else sec.get("bandwidth"),
            calibration=args.method or sec.get("calibration"),
            regression=args.regression or sec.get("regression", "nw"),
            regression_bandwidth=args.reg_bandwidth or sec.get("reg_bandwidth", 1.5),
            knn_k=args.knn_k or sec.get("knn_k", 10),
            propensity=args.propensity or sec.get("propensity"),
        )

        def progress(done, total, n=n):
            if done % max(1, total // 10) == 0 or done == total:
                print(f"[n={n}] {done}/{total} replications", file=sys.stderr)

        trace = out_dir / f"trace_n{n}.jsonl" if (out_dir and args.trace) else None
        row = run_experiment(spec, config, workers=args.threads or 1, trace_path=trace,
                             progress=progress)
        table.append(row)
    if out_dir is not None:
        table.to_csv(out_dir / "rejection_table.csv")
        table.to_json(out_dir / "rejection_table.json")
        table.to_tsv(out_dir / "rejection_table.tsv")
        (out_dir / "config.json").write_text(json.dumps(
            {"test_config": config.to_dict(), "scenario": spec.to_dict()}, indent=2) + "\n")
    else:
        sys.stdout.write(table.to_csv())
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    checks = run_identity_checks()
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} identities hold")
    return EXIT_ORACLE if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmd-eqd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON or TOML file with TestConfig fields")
        p.add_argument("--out", help="output file (test) or directory (simulate)")
        p.add_argument("--alpha", type=float)
        p.add_argument("--method", choices=[c.value for c in Calibration])
        p.add_argument("--bandwidth", type=float, help="Gaussian kernel bandwidth")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--mc-draws", type=int)
        p.add_argument("--eigen-count", help="positive integer or 'all'")
        p.add_argument("--split", action="store_true", help="two-fold sample splitting")
        p.add_argument("--regression", choices=["ols", "nw", "knn"])
        p.add_argument("--reg-bandwidth", type=float, help="Nadaraya-Watson bandwidth")
        p.add_argument("--knn-k", type=int)
        p.add_argument("--propensity", choices=["known", "logistic"])

    t = sub.add_parser("test", help="run the test on a CSV file")
    common(t)
    t.add_argument("--data", help="CSV file with a header row")
    t.add_argument("--example", choices=[e.value for e in Example])
    t.add_argument("--w-cols", help="comma-separated covariate columns")
    t.add_argument("--a-col", help="treatment column")
    t.add_argument("--y-cols", help="comma-separated outcome columns")
    t.add_argument("--p-treat", type=float, help="known P(A=1|W)")
    t.add_argument("--clip-b", type=float)
    t.add_argument("--k", type=int, help="0-based covariate index for ex4")
    t.add_argument("--p-artificial", type=float, help="Bernoulli probability for ex4")
    t.set_defaults(func=cmd_test)

    s = sub.add_parser("simulate", help="Monte Carlo rejection rates for a scenario")
    common(s)
    s.add_argument("--scenario", choices=["1a", "1b", "1c", "2", "3"])
    s.add_argument("--n", help="sample size, or comma-separated sizes")
    s.add_argument("--reps", type=int)
    s.add_argument("--beta", type=float)
    s.add_argument("--signal-coords", type=int)
    s.add_argument("--test", choices=["ex1", "ex2"])
    s.add_argument("--trace", action="store_true", help="write per-replication JSON lines")
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("oracle-check", help="verify exact identities on discrete fixtures")
    o.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, ArithmeticError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
