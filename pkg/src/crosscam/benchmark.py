"""The committed synthetic benchmark: corpus, schedule, and named settings.

One place defines the exact protocol used by the acceptance tests and by
scripts/run_benchmark.py, so both always measure the same thing: a
200-identity, 4-camera corpus with the generator defaults, trained on a
compressed schedule that keeps the published phase proportions (warmup
for the first third, learning-rate decay at two thirds) while fitting a
desk-scale runtime budget.

Settings are chosen so every compared pair differs in exactly one knob
and shares its seed list, giving paired comparisons:

- baseline_intra      within-camera triplet only (lam = 0)
- random_mining       baseline with random instead of hard mining
- soft_ce             adds the soft-label cross-entropy ("C")
- soft_triplet        adds the weighted soft triplet ("D")
- soft_triplet_unmasked   "D" without the same-camera affinity mask
- soft_triplet_w      "D" with affinity-proportional positive weights
- soft_triplet_nearest    "D" drawing nearest instead of random positives
- full                both soft-label losses ("C+D")
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .data import Dataset, SynthSpec, generate_synthetic
from .errors import ContractError
from .evaluation import evaluate
from .trainer import TrainConfig, TrainLog, train

BENCHMARK_SPEC = SynthSpec()  # 200 identities, 4 cameras, generator defaults

BENCHMARK_EPOCHS = 42
BENCHMARK_WARMUP = 14
BENCHMARK_DECAY = 28

BENCHMARK_SEEDS = (1, 2, 3, 4, 5)

BENCHMARK_SETTINGS: dict[str, dict] = {
    "baseline_intra": {"lam": 0.0},
    "random_mining": {"lam": 0.0, "mining_mode": "random"},
    "soft_ce": {"inter_mode": "C"},
    "soft_triplet": {"inter_mode": "D"},
    "soft_triplet_unmasked": {"inter_mode": "D", "mask_same_camera": False},
    "soft_triplet_w": {"inter_mode": "D", "weighting_mode": "W"},
    "soft_triplet_nearest": {"inter_mode": "D", "positive_sampling": "nearest"},
    "full": {"inter_mode": "C+D"},
}


def benchmark_config(**overrides) -> TrainConfig:
    """The committed training configuration, with optional overrides."""
    base = TrainConfig(
        epochs=BENCHMARK_EPOCHS,
        warmup_epochs=BENCHMARK_WARMUP,
        decay_epoch=BENCHMARK_DECAY,
    )
    cfg = dataclasses.replace(base, **overrides)
    cfg.validate()
    return cfg


def benchmark_corpus() -> dict[str, Dataset]:
    return generate_synthetic(BENCHMARK_SPEC)


@dataclass
class BenchmarkRun:
    label: str
    seed: int
    map: float
    rank1: float
    log: TrainLog


@dataclass
class BenchmarkOutcome:
    runs: list[BenchmarkRun]

    def of(self, label: str) -> list[BenchmarkRun]:
        found = [r for r in self.runs if r.label == label]
        if not found:
            raise ContractError(f"no benchmark runs for setting {label!r}")
        return found

    def maps(self, label: str) -> list[float]:
        return [r.map for r in self.of(label)]

    def median_map(self, label: str) -> float:
        import statistics

        return statistics.median(self.maps(label))

    def table_text(self) -> str:
        labels = list(dict.fromkeys(r.label for r in self.runs))
        width = max(len(label) for label in labels)
        lines = [f"{'setting'.ljust(width)}  median_mAP  per-seed mAP"]
        for label in labels:
            rows = self.of(label)
            per_seed = " ".join(f"{r.map:.4f}" for r in rows)
            lines.append(f"{label.ljust(width)}  {self.median_map(label):10.4f}  {per_seed}")
        return "\n".join(lines) + "\n"

    def to_jsonable(self) -> dict:
        labels = list(dict.fromkeys(r.label for r in self.runs))
        return {
            "settings": {
                label: {
                    "median_map": self.median_map(label),
                    "runs": [
                        {"seed": r.seed, "map": r.map, "rank1": r.rank1}
                        for r in self.of(label)
                    ],
                }
                for label in labels
            }
        }


def run_benchmark_setting(
    corpus: dict[str, Dataset],
    label: str,
    seed: int,
    config_overrides: dict | None = None,
) -> BenchmarkRun:
    """Train one committed setting on one seed and score the final model."""
    if label not in BENCHMARK_SETTINGS:
        raise ContractError(
            f"unknown benchmark setting {label!r}; expected one of {sorted(BENCHMARK_SETTINGS)}"
        )
    overrides = dict(BENCHMARK_SETTINGS[label])
    overrides.update(config_overrides or {})
    cfg = benchmark_config(seed=seed, **overrides)
    result = train(corpus["train"], cfg)
    scored = evaluate(result.model, corpus["query"], corpus["gallery"])
    return BenchmarkRun(
        label=label, seed=seed, map=scored.map, rank1=scored.cmc[1], log=result.log
    )


def run_benchmark(
    corpus: dict[str, Dataset] | None = None,
    settings: list[str] | None = None,
    seeds: tuple[int, ...] = BENCHMARK_SEEDS,
    config_overrides: dict | None = None,
    progress=None,
) -> BenchmarkOutcome:
    """Run the named settings over shared seeds; the workhorse behind both
    scripts/run_benchmark.py and the acceptance tests."""
    if corpus is None:
        corpus = benchmark_corpus()
    if settings is None:
        settings = list(BENCHMARK_SETTINGS)
    runs = []
    for label in settings:
        for seed in seeds:
            run = run_benchmark_setting(corpus, label, seed, config_overrides)
            runs.append(run)
            if progress is not None:
                progress(run)
    return BenchmarkOutcome(runs)
