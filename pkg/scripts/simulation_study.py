"""Rejection-rate study over the built-in scenarios.

    python scripts/simulation_study.py --out results/study --reps 500

Writes one CSV/JSON table per study block into the output directory.
"""

from __future__ import annotations

import argparse
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from mmd_eqd.core import RngSeed, TestConfig
from mmd_eqd.simulation import RejectionTable, ScenarioSpec, run_experiment


@dataclass
class StudyConfig:
    reps: int = 500
    seed: int = 1
    sizes: tuple[int, ...] = (250, 500, 1000)
    betas: tuple[float, ...] = (-0.5, -0.25, 0.0, 0.25, 0.5)
    signal_coords: tuple[int, ...] = (0, 5, 10, 15, 20)
    scenario3_n: int = 1000
    mc_draws: int = 10_000
    workers: int = 1
    blocks: tuple[str, ...] = ("scenario1", "scenario2", "scenario3")


def scenario1(cfg: StudyConfig):
    for variant in ("1a", "1b", "1c"):
        for test in ("ex1", "ex2"):
            for n in cfg.sizes:
                yield ScenarioSpec(variant, n=n, test=test, replications=cfg.reps,
                                   seed=RngSeed(cfg.seed))


def scenario2(cfg: StudyConfig):
    for beta in cfg.betas:
        for n in cfg.sizes:
            yield ScenarioSpec("2", n=n, test="ex1", replications=cfg.reps, beta=beta,
                               seed=RngSeed(cfg.seed))


def scenario3(cfg: StudyConfig):
    for k in cfg.signal_coords:
        yield ScenarioSpec("3", n=cfg.scenario3_n, test="ex1", replications=cfg.reps,
                           signal_coords=k, seed=RngSeed(cfg.seed))


BLOCKS = {"scenario1": scenario1, "scenario2": scenario2, "scenario3": scenario3}


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("results/study"))
    p.add_argument("--reps", type=int, default=StudyConfig.reps)
    p.add_argument("--seed", type=int, default=StudyConfig.seed)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--blocks", nargs="+", choices=sorted(BLOCKS), default=list(StudyConfig.blocks))
    args = p.parse_args()
    cfg = StudyConfig(reps=args.reps, seed=args.seed, workers=args.workers, blocks=tuple(args.blocks))
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "study_config.json").write_text(json.dumps(asdict(cfg), indent=2) + "\n")
    test_cfg = TestConfig(mc_draws=cfg.mc_draws)

    for block in cfg.blocks:
        table = RejectionTable()
        for spec in BLOCKS[block](cfg):
            start = time.perf_counter()
            row = run_experiment(spec, test_cfg, workers=cfg.workers)
            table.append(row)
            print(f"{block:9s} {spec.label:16s} test={spec.test} n={spec.n:5d} "
                  f"rate={row.rate:.3f} se={row.mc_se:.3f} ({time.perf_counter() - start:.0f}s)",
                  flush=True)
        table.to_csv(args.out / f"{block}.csv")
        table.to_json(args.out / f"{block}.json")


if __name__ == "__main__":
    main()
