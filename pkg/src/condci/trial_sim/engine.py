"""Block-seeded Monte Carlo engine.

Replicates are simulated in fixed-size blocks.  Block ``k`` draws from its
own generator seeded by ``SeedSequence(seed, spawn_key=(k,))``, so a run is
a pure function of ``(scenario, seed)``: the number of workers only changes
how blocks are scheduled, never what they produce.  Records are assembled
in block order after collection.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .scenarios import GENERATORS, ScenarioKernel, conditional_method_name

__all__ = [
    "MAX_ATTEMPTS",
    "Scenario",
    "SimulationResult",
    "load_presets",
    "run_monte_carlo",
    "scenario_from_config",
]

#: Give up on generate-until-selected runs after this many attempts.
MAX_ATTEMPTS = 10**9

_PRESETS = Path(__file__).resolve().parent.parent / "data" / "scenarios.json"


@dataclass(frozen=True)
class Scenario:
    """A fully specified simulation run.

    ``reps`` is the number of replicates for fixed-count scenarios and the
    number of *selected* replicates for generate-until-selected ones.
    """

    name: str
    params: dict[str, Any] = field(default_factory=dict)
    reps: int = 1000
    seed: int = 0
    alpha: float = 0.05
    delta_n: tuple[float, ...] = (0.0,)
    block_size: int | None = None
    label: str | None = None

    def __post_init__(self):
        if self.name not in GENERATORS:
            raise ValueError(f"unknown scenario {self.name!r}; choose from {sorted(GENERATORS)}")
        if int(self.reps) != self.reps or self.reps < 1:
            raise ValueError(f"reps must be a positive integer, got {self.reps}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        deltas = tuple(float(d) for d in np.atleast_1d(self.delta_n))
        if not deltas or any(d < 0 for d in deltas):
            raise ValueError("delta_n values must be nonnegative")
        unknown = set(self.params) - set(self.kernel.defaults)
        if unknown:
            raise ValueError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        object.__setattr__(self, "delta_n", deltas)
        object.__setattr__(self, "params", {**self.kernel.defaults, **self.params})
        if self.block_size is not None and self.block_size < 1:
            raise ValueError("block_size must be positive")

    @property
    def kernel(self) -> ScenarioKernel:
        return GENERATORS[self.name]

    @property
    def until_selected(self) -> bool:
        return self.kernel.until_selected

    @property
    def methods(self) -> list[str]:
        return ["wald"] + [conditional_method_name(d, self.delta_n) for d in self.delta_n]

    @property
    def effective_block_size(self) -> int:
        return int(self.block_size or self.kernel.block_size)

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.name,
            "params": self.params,
            "reps": self.reps,
            "seed": self.seed,
            "alpha": self.alpha,
            "delta_n": list(self.delta_n),
            "block_size": self.effective_block_size,
            "label": self.label,
        }


@dataclass
class SimulationResult:
    """Records from one run plus bookkeeping."""

    scenario: Scenario
    records: pd.DataFrame
    attempts: int
    n_replicates: int  # replicates the report frequencies are relative to


def _run_block(args) -> tuple[pd.DataFrame, int]:
    scenario, block, start, size = args
    rng = np.random.default_rng(np.random.SeedSequence(scenario.seed, spawn_key=(block,)))
    return scenario.kernel.block(scenario.params, scenario.alpha, scenario.delta_n, rng, start, size)


def _map_blocks(tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [_run_block(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_block, tasks))


def run_monte_carlo(scenario: Scenario, workers: int = 1) -> SimulationResult:
    """Simulate ``scenario`` and return its records.

    Fixed-count scenarios run ``reps`` replicates.  Generate-until-selected
    scenarios run blocks in order, ``workers`` at a time, until at least
    ``reps`` replicates pass the screen, then keep the first ``reps`` of
    them; ``attempts`` counts replicates generated up to and including the
    last kept one.
    """
    bs = scenario.effective_block_size
    if not scenario.until_selected:
        n_blocks = math.ceil(scenario.reps / bs)
        tasks = [(scenario, k, k * bs, min(bs, scenario.reps - k * bs)) for k in range(n_blocks)]
        out = _map_blocks(tasks, workers)
        records = pd.concat([o[0] for o in out], ignore_index=True)
        records = records.sort_values(["param", "rep"], kind="stable").reset_index(drop=True)
        return SimulationResult(scenario, records, scenario.reps, scenario.reps)

    frames: list[pd.DataFrame] = []
    selected = 0
    block = 0
    wave = max(1, workers)
    while selected < scenario.reps:
        if block * bs >= MAX_ATTEMPTS:
            raise RuntimeError(
                f"only {selected} of {scenario.reps} replicates selected after {block * bs} attempts"
            )
        tasks = [(scenario, k, k * bs, bs) for k in range(block, block + wave)]
        for df, _ in _map_blocks(tasks, workers):
            frames.append(df)
            selected += df["rep"].nunique()
        block += wave
    records = pd.concat(frames, ignore_index=True)
    keep_reps = np.sort(records["rep"].unique())[: scenario.reps]
    records = records[records["rep"].isin(keep_reps)]
    records = records.sort_values(["param", "rep"], kind="stable").reset_index(drop=True)
    attempts = int(keep_reps[-1]) + 1
    return SimulationResult(scenario, records, attempts, scenario.reps)


def load_presets() -> dict[str, dict[str, Any]]:
    with open(_PRESETS) as fh:
        return json.load(fh)


_CONFIG_KEYS = {"scenario", "preset", "params", "reps", "seed", "alpha", "delta_n", "block_size", "label"}


def scenario_from_config(obj: dict[str, Any], **overrides) -> Scenario:
    """Build a :class:`Scenario` from a config object, optionally via a preset.

    ``{"preset": "table1_rho04_n100", "reps": 200}`` starts from the bundled
    preset and overrides ``reps``; ``{"scenario": "setting3", "params": {...}}``
    builds from scratch.  Unknown keys are rejected.
    """
    unknown = set(obj) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    base: dict[str, Any] = {}
    if "preset" in obj:
        presets = load_presets()
        if obj["preset"] not in presets:
            raise ValueError(f"unknown preset {obj['preset']!r}; choose from {sorted(presets)}")
        base = dict(presets[obj["preset"]])
        base.pop("description", None)
    merged = {**base, **{k: v for k, v in obj.items() if k != "preset"}}
    if "params" in base and "params" in obj:
        merged["params"] = {**base["params"], **obj["params"]}
    merged.update({k: v for k, v in overrides.items() if v is not None})
    if "scenario" not in merged:
        raise ValueError("config must name a 'scenario' or a 'preset'")
    return Scenario(
        name=merged["scenario"],
        params=merged.get("params", {}),
        reps=merged.get("reps", 1000),
        seed=merged.get("seed", 0),
        alpha=merged.get("alpha", 0.05),
        delta_n=tuple(np.atleast_1d(merged.get("delta_n", [0.0]))),
        block_size=merged.get("block_size"),
        label=merged.get("label"),
    )
