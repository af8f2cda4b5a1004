"""Variant ladder on the synthetic dataset: train each variant per seed, compare median mAP50."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

from .data import Dataset, SceneSpec, generate_scene
from .model import ModelConfig, build_model
from .train import TrainConfig, evaluate, train

VAL_SEED_OFFSET = 1_000_000


@dataclass
class AblationSetup:
    variants: tuple[str, ...] = ("baseline", "mepf", "full")
    seeds: tuple[int, ...] = (0, 1, 2)
    train_scenes: int = 500
    val_scenes: int = 100
    size: int = 128
    mode: str = "mixed"
    width_scale: float = 0.125
    epochs: int = 20
    final_lr_ratio: float = 0.05


@dataclass
class AblationResult:
    setup: AblationSetup
    map50: dict[str, list[float]] = field(default_factory=dict)    # per variant, one per seed
    seconds: dict[str, list[float]] = field(default_factory=dict)

    def median(self, variant: str) -> float:
        return statistics.median(self.map50[variant])

    def direction_holds(self) -> bool:
        """baseline < mepf and mepf <= full, on the medians."""
        return self.median("baseline") < self.median("mepf") <= self.median("full")

    def lines(self) -> list[str]:
        out = []
        for v, scores in self.map50.items():
            runs = " ".join(f"{s:.4f}" for s in scores)
            out.append(f"{v:10s} median={self.median(v):.4f} runs=[{runs}] "
                       f"max_run_s={max(self.seconds[v]):.0f}")
        return out


def datasets(setup: AblationSetup) -> tuple[Dataset, Dataset]:
    """Train scenes use seeds 0..n-1, validation scenes start at a disjoint offset."""
    spec = SceneSpec(size=setup.size, mode=setup.mode)
    tr = Dataset.from_scenes([generate_scene(i, spec) for i in range(setup.train_scenes)])
    va = Dataset.from_scenes([generate_scene(VAL_SEED_OFFSET + i, spec)
                              for i in range(setup.val_scenes)])
    return tr, va


def run(setup: AblationSetup, progress=None) -> AblationResult:
    tr, va = datasets(setup)
    result = AblationResult(setup)
    for v in setup.variants:
        result.map50[v], result.seconds[v] = [], []
        for seed in setup.seeds:
            t0 = time.perf_counter()
            model = build_model(ModelConfig(variant=v, width_scale=setup.width_scale, seed=seed))
            train(model, tr, TrainConfig(epochs=setup.epochs, seed=seed,
                                         final_lr_ratio=setup.final_lr_ratio))
            score = evaluate(model, va).map50
            result.map50[v].append(score)
            result.seconds[v].append(time.perf_counter() - t0)
            if progress:
                progress(v, seed, score)
    return result
