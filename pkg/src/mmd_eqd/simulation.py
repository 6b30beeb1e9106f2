"""Simulation scenarios and the Monte Carlo rejection-rate harness."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .core import Calibration, Dataset, RngSeed, Splitting, TestConfig, ValidationError
from .inference import run_test
from .nuisance import (Example, ExampleSpec, NadarayaWatson, PropensityModel,
                       evaluate_example, make_regression, split_fit)

log = logging.getLogger(__name__)

SCENARIO1_VARIANTS = ("a", "b", "c")
SCENARIO3_DIM = 20


def derive_seed(seed: RngSeed, *keys: int) -> RngSeed:
    """A new seed whose stream is independent of ``seed``'s other sub-streams."""
    state = np.random.SeedSequence([seed.seed, seed.stream, *keys]).generate_state(2, np.uint32)
    return RngSeed(int(state[0]) << 32 | int(state[1]), 0)


# ---------------------------------------------------------------------------
# Scenario 1: five normal covariates, randomised treatment, shifted-Beta noise
# ---------------------------------------------------------------------------


def _m(w: np.ndarray) -> np.ndarray:
    return 0.2 * (w[:, 0] ** 2 + w[:, 1] - 2.0 * w[:, 2] * w[:, 3])


def scenario1_mean(variant: str, a, w) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    w = np.atleast_2d(np.asarray(w, dtype=float))
    base = _m(w)
    if variant == "a":
        return base
    if variant == "b":
        return base + 0.4 * (a * w[:, 2] + (1 - a) * w[:, 3])
    if variant == "c":
        return base + 0.8 * a * w[:, 2]
    raise ValidationError(f"unknown scenario-1 variant {variant!r}")


def scenario1_noise(a, w, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Beta(3 expit(a w2), 2 expit((1-a) w1)) shifted to mean zero (unscaled)."""
    a = np.asarray(a, dtype=float)
    w = np.atleast_2d(np.asarray(w, dtype=float))
    alpha = 3.0 * expit(a * w[:, 1])
    beta = 2.0 * expit((1 - a) * w[:, 0])
    if np.any(alpha <= 1e-8) or np.any(beta <= 1e-8):
        raise FloatingPointError("Beta shape parameter collapsed to zero")
    shape = alpha.shape if size is None else (size,) + alpha.shape
    return rng.beta(alpha, beta, size=shape) - alpha / (alpha + beta)


def _draw_w_a(n: int, rng: np.random.Generator):
    w = rng.standard_normal((n, 5))
    a = rng.binomial(1, 0.5, size=n)
    return w, a


def draw_scenario1(variant: str, n: int, seed: RngSeed) -> Dataset:
    if variant not in SCENARIO1_VARIANTS:
        raise ValidationError(f"unknown scenario-1 variant {variant!r}")
    if n < 2:
        raise ValidationError("n must be at least 2")
    rng = seed.generator()
    w, a = _draw_w_a(n, rng)
    xi = scenario1_noise(a, w, rng)
    y = scenario1_mean(variant, a, w) + 5.0 * xi
    return Dataset(w=w, a=a, y=y)


# ---------------------------------------------------------------------------
# Scenario 2: binary and normal covariate, effect growing in W2^2
# ---------------------------------------------------------------------------


def scenario2_mean(beta: float, a, w) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    w = np.atleast_2d(np.asarray(w, dtype=float))
    return 1.0 + beta * a * (1.0 + w[:, 1] ** 2) + w[:, 0] + w[:, 1]


def draw_scenario2(beta: float, n: int, seed: RngSeed) -> Dataset:
    if n < 2:
        raise ValidationError("n must be at least 2")
    if abs(beta) > 0.5:
        warnings.warn("beta outside [-0.5, 0.5] is outside the studied range", stacklevel=2)
    rng = seed.generator()
    a = rng.binomial(1, 0.5, size=n)
    w = np.column_stack([rng.binomial(1, 0.5, size=n).astype(float), rng.standard_normal(n)])
    y = scenario2_mean(beta, a, w) + rng.standard_normal(n)
    return Dataset(w=w, a=a, y=y)


# ---------------------------------------------------------------------------
# Scenario 3: twenty-dimensional outcome
# ---------------------------------------------------------------------------


def draw_scenario3(signal_coords: int, n: int, seed: RngSeed) -> Dataset:
    """Coordinates below ``signal_coords`` follow scenario 1c, the rest 1a, all scaled by 1/20."""
    if not 0 <= signal_coords <= SCENARIO3_DIM:
        raise ValidationError(f"signal_coords must lie in 0..{SCENARIO3_DIM}")
    if n < 2:
        raise ValidationError("n must be at least 2")
    rng = seed.generator()
    w, a = _draw_w_a(n, rng)
    xi = scenario1_noise(a, w, rng, size=SCENARIO3_DIM).T  # (n, 20), independent given (a, w)
    mean_c = scenario1_mean("c", a, w)
    mean_a = scenario1_mean("a", a, w)
    signal = np.arange(SCENARIO3_DIM) < signal_coords
    mean = np.where(signal[None, :], mean_c[:, None], mean_a[:, None])
    y = (mean + 5.0 * xi) / SCENARIO3_DIM
    return Dataset(w=w, a=a, y=y)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


@dataclass
class ScenarioSpec:
    """One cell of a simulation study.

    ``scenario`` is one of "1a", "1b", "1c", "2", "3".  ``bandwidth=None``
    selects 1/5 for scenario 2 and 1 otherwise.  ``calibration=None`` uses the
    closed-form cutoff for the scalar blip test and the Gram-eigenvalue
    method otherwise.
    """

    scenario: str = "1a"
    n: int = 500
    test: str = "ex1"
    replications: int = 100
    seed: RngSeed = field(default_factory=RngSeed)
    beta: float = 0.0
    signal_coords: int = 0
    bandwidth: float | None = None
    calibration: Calibration | None = None
    regression: str = "nw"
    regression_bandwidth: float = 1.5
    knn_k: int = 10
    propensity: str | None = None

    def __post_init__(self):
        self.scenario = str(self.scenario).lower()
        if self.scenario not in ("1a", "1b", "1c", "2", "3"):
            raise ValidationError(f"unknown scenario {self.scenario!r}")
        if self.test not in ("ex1", "ex2"):
            raise ValidationError("test must be 'ex1' or 'ex2'")
        if self.replications < 1:
            raise ValidationError("replications must be at least 1")
        if self.n < 4:
            raise ValidationError("n must be at least 4")
        if isinstance(self.seed, int):
            self.seed = RngSeed(self.seed)
        if self.calibration is not None:
            self.calibration = Calibration(self.calibration)
        if self.scenario == "2" and abs(self.beta) > 0.5:
            warnings.warn("beta outside [-0.5, 0.5] is outside the studied range", stacklevel=2)

    @property
    def label(self) -> str:
        if self.scenario == "2":
            return f"2(beta={self.beta:g})"
        if self.scenario == "3":
            return f"3(signal={self.signal_coords})"
        return self.scenario

    def resolved_bandwidth(self) -> float:
        if self.bandwidth is not None:
            return self.bandwidth
        return 0.2 if self.scenario == "2" else 1.0

    def resolved_calibration(self) -> Calibration:
        if self.calibration is not None:
            return self.calibration
        if self.test == "ex1" and self.scenario != "3":
            return Calibration.DEGENERATE_S
        return Calibration.GRAM_EIGEN

    def draw(self, seed: RngSeed) -> Dataset:
        if self.scenario == "2":
            return draw_scenario2(self.beta, self.n, seed)
        if self.scenario == "3":
            return draw_scenario3(self.signal_coords, self.n, seed)
        return draw_scenario1(self.scenario[1], self.n, seed)

    def example_spec(self) -> ExampleSpec:
        model = make_regression(self.regression, bandwidth=self.regression_bandwidth, k=self.knn_k)
        prop = self.propensity or ("logistic" if self.scenario == "2" else "known")
        propensity = PropensityModel.logistic() if prop == "logistic" else PropensityModel.known(0.5)
        example = Example.CATE if self.test == "ex1" else Example.TWO_POP
        return ExampleSpec(example=example, outcome_model=model, propensity_model=propensity)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["calibration"] = None if self.calibration is None else self.calibration.value
        return d


@dataclass(frozen=True)
class RejectionRow:
    scenario: str
    n: int
    method: str
    alpha: float
    rate: float
    mc_se: float
    reps: int
    failed: int = 0

    @classmethod
    def from_decisions(cls, scenario, n, method, alpha, decisions, failed=0) -> "RejectionRow":
        reps = len(decisions)
        rate = float(np.mean(decisions)) if reps else float("nan")
        mc_se = math.sqrt(rate * (1 - rate) / reps) if reps else float("nan")
        return cls(scenario, n, method, alpha, rate, mc_se, reps, failed)


CSV_HEADER = ("scenario", "n", "method", "alpha", "rate", "mc_se", "reps")


@dataclass
class RejectionTable:
    rows: list[RejectionRow] = field(default_factory=list)

    def append(self, row: RejectionRow) -> None:
        self.rows.append(row)

    def to_csv(self, path: str | Path | None = None, delimiter: str = ",") -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.rows:
            writer.writerow([r.scenario, r.n, r.method, repr(r.alpha), f"{r.rate:.6f}",
                             f"{r.mc_se:.6f}", r.reps])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_tsv(self, path: str | Path | None = None) -> str:
        return self.to_csv(path, delimiter="\t")

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps([asdict(r) for r in self.rows], indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text


def run_replication(spec: ScenarioSpec, config: TestConfig, rep: int) -> dict:
    """Draw one dataset, fit nuisances, run the test; returns a trace record."""
    data_seed = derive_seed(spec.seed, rep, 0)
    test_seed = derive_seed(spec.seed, rep, 1)
    bandwidth = spec.resolved_bandwidth()
    data = spec.draw(data_seed)
    ex_spec = spec.example_spec()
    if config.sample_splitting is Splitting.TWO_FOLD:
        fe = split_fit(ex_spec, data, test_seed, bandwidth=bandwidth)
    else:
        fe = evaluate_example(ex_spec, data, test_seed, bandwidth=bandwidth)
    cfg = replace(config, calibration=spec.resolved_calibration(), bandwidth=bandwidth,
                  seed=test_seed)
    res = run_test(fe, cfg)
    return {"rep": rep, "reject": bool(res.reject), "n_psi_n": res.n_psi_n,
            "cutoff": res.cutoff, "psi_n": res.psi_n}


def _safe_replication(args) -> dict:
    spec, config, rep = args
    try:
        return run_replication(spec, config, rep)
    except (ValidationError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        return {"rep": rep, "error": f"{type(exc).__name__}: {exc}"}


def run_experiment(spec: ScenarioSpec, test_config: TestConfig | None = None, *,
                   workers: int = 1, trace_path: str | Path | None = None,
                   progress=None) -> RejectionRow:
    """Replicate ``spec`` and aggregate the rejection rate.

    Replications that raise are excluded from the rate and counted in ``failed``.
    """
    config = test_config or TestConfig()
    jobs = [(spec, config, rep) for rep in range(spec.replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_safe_replication, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        records = []
        for job in jobs:
            records.append(_safe_replication(job))
            if progress is not None:
                progress(len(records), len(jobs))
    records.sort(key=lambda r: r["rep"])
    if trace_path is not None:
        with open(trace_path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
    decisions = [r["reject"] for r in records if "reject" in r]
    failed = sum("error" in r for r in records)
    if failed:
        log.warning("%d of %d replications failed and were excluded", failed, len(records))
    return RejectionRow.from_decisions(spec.label, spec.n, spec.resolved_calibration().value,
                                       config.alpha, decisions, failed)
