"""Catalog of preset experiments mirroring the canonical evaluation scenarios."""

from __future__ import annotations

from dataclasses import dataclass, field

from .clients import SgdConfig
from .config import (
    AttackSpec,
    DatasetSpec,
    DefenseSpec,
    ExperimentConfig,
    PartitionSpec,
)
from .defenses import DefenseConfig
from .errors import ConfigurationError


@dataclass
class Preset:
    name: str
    description: str
    config: ExperimentConfig
    sweep: dict[str, list] = field(default_factory=dict)
    kind: str = "run"  # run | grid | overhead
    client_counts: list[int] = field(default_factory=lambda: [10, 20, 30, 40, 50])


def _base(name: str, **kwargs) -> ExperimentConfig:
    defaults = dict(
        name=name,
        seed=42,
        total_iterations=3000,
        dataset=DatasetSpec(kind="mnist_like"),
        partitioning=PartitionSpec(num_honest=10),
        sgd=SgdConfig(local_learning_rate=0.05, regularization=1e-4,
                      batch_size=50, local_iterations=1),
    )
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)


def _flip(num_sybils: int, source: int = 1, target: int = 7, **kwargs) -> AttackSpec:
    return AttackSpec(type="labelflip", num_sybils=num_sybils, source=source,
                      target=target, **kwargs)


def _fg(**kwargs) -> DefenseSpec:
    return DefenseSpec(kind="foolsgold", foolsgold=DefenseConfig(**kwargs))


def build_catalog() -> dict[str, Preset]:
    presets: dict[str, Preset] = {}

    def add(preset: Preset) -> None:
        presets[preset.name] = preset

    add(Preset(
        "table1-baseline",
        "Unmodified federated averaging, 10 single-class clients, no attack.",
        _base("table1-baseline", defense=DefenseSpec(kind="baseline")),
    ))
    add(Preset(
        "table1-attack2",
        "Baseline averaging with 2 label-flip (1->7) sybils.",
        _base("table1-attack2", defense=DefenseSpec(kind="baseline"),
              attacks=[_flip(2)]),
    ))
    add(Preset(
        "fg-na",
        "Similarity defense enabled, no attack (false-positive check).",
        _base("fg-na", defense=_fg()),
    ))
    add(Preset(
        "a5-mnist-foolsgold",
        "Canonical 5-sybil label-flip attack against the similarity defense.",
        _base("a5-mnist-foolsgold", defense=_fg(), attacks=[_flip(5)]),
    ))
    add(Preset(
        "a99",
        "990 cloned sybils vs 10 honest clients, similarity defense.",
        _base("a99", defense=_fg(),
              dataset=DatasetSpec(kind="synthetic", seed=4711, num_classes=10,
                                  num_features=784,
                                  examples_per_class=[650] * 10,
                                  test_fraction=0.23, centroid_sparsity=0.15,
                                  dead_features=196, noise_scale=0.4),
              partitioning=PartitionSpec(num_honest=10, clone_sybil_data=True),
              attacks=[_flip(990)], total_iterations=300,
              sgd=SgdConfig(local_learning_rate=0.05, regularization=1e-4,
                            batch_size=5, local_iterations=1)),
    ))
    add(Preset(
        "a99-scaled",
        "Scaled 90%-sybil variant of a99 (90 sybils vs 10 honest).",
        _base("a99-scaled", defense=_fg(),
              partitioning=PartitionSpec(num_honest=10, clone_sybil_data=True),
              attacks=[_flip(90)], total_iterations=1000),
    ))
    add(Preset(
        "ablation-logit",
        "a99 with the logit rescale disabled (attack should succeed).",
        _base("ablation-logit", defense=_fg(enable_logit=False),
              dataset=DatasetSpec(kind="synthetic", seed=4711, num_classes=10,
                                  num_features=784,
                                  examples_per_class=[650] * 10,
                                  test_fraction=0.23, centroid_sparsity=0.15,
                                  dead_features=196, noise_scale=0.4),
              partitioning=PartitionSpec(num_honest=10, clone_sybil_data=True),
              attacks=[_flip(990)], total_iterations=300,
              sgd=SgdConfig(local_learning_rate=0.05, regularization=1e-4,
                            batch_size=5, local_iterations=1)),
    ))
    add(Preset(
        "multikrum-sweep",
        "Baseline vs Multi-Krum (f = sybils) vs similarity defense, 6 sybils "
        "of 16 clients, FEDSGD and FEDAVG.",
        _base("multikrum-sweep",
              defense=DefenseSpec(kind="multikrum", f=6,
                                  foolsgold=DefenseConfig()),
              attacks=[_flip(6)]),
        sweep={"defense.kind": ["baseline", "multikrum", "foolsgold"],
               "sgd.local_iterations": [1, 5]},
        kind="grid",
    ))
    add(Preset(
        "noise-attack-sweep",
        "Intelligent-noise sybil pair vs feature weighting (hard ratios and soft).",
        _base("noise-attack-sweep",
              dataset=DatasetSpec(kind="synthetic", seed=4242, num_classes=10,
                                  num_features=784,
                                  examples_per_class=[650] * 10,
                                  test_fraction=0.23, centroid_sparsity=0.9,
                                  dead_features=196, noise_scale=0.1),
              sgd=SgdConfig(local_learning_rate=0.01, regularization=1e-4,
                            batch_size=50, local_iterations=1),
              defense=_fg(feature_mode="hard", hard_ratio=1.0),
              attacks=[AttackSpec(type="noise", num_sybils=2, source=1, target=7,
                                  noise_scale=3.0, noise_indicative_ratio=0.1)]),
        sweep={"defense.foolsgold.feature_mode": ["hard", "soft"],
               "defense.foolsgold.hard_ratio": [0.01, 0.1, 1.0]},
        kind="grid",
    ))
    add(Preset(
        "adaptive-attack",
        "Similarity-gated sybils with local bookkeeping, M in {1.0, 0.01}.",
        _base("adaptive-attack",
              defense=_fg(),
              attacks=[AttackSpec(type="adaptive", num_sybils=20, source=1,
                                  target=7, threshold=0.01, noise_scale=1.0,
                                  attacker_knows_features=True)]),
        sweep={"attacks.0.threshold": [1.0, 0.01]},
        kind="grid",
    ))
    add(Preset(
        "mix-grid",
        "5x5 sybil/honest data-distribution grid, 5-sybil 0->1 attack.",
        _base("mix-grid", defense=_fg(), attacks=[_flip(5, source=0, target=1)]),
        sweep={"partitioning.x_sybil": [0.0, 0.25, 0.5, 0.75, 1.0],
               "partitioning.x_honest": [0.0, 0.25, 0.5, 0.75, 1.0]},
        kind="grid",
    ))
    add(Preset(
        "attack-grid",
        "All 90 source->target 5-sybil label-flip attacks (diagonal invalid).",
        _base("attack-grid", defense=_fg(), attacks=[_flip(5)],
              total_iterations=1000),
        sweep={"attacks.0.source": list(range(10)),
               "attacks.0.target": list(range(10))},
        kind="grid",
    ))
    add(Preset(
        "backdoor-sweep",
        "Single-pixel backdoor attack, baseline vs similarity defense, "
        "1-9 sybils.",
        _base("backdoor-sweep", defense=_fg(),
              attacks=[AttackSpec(type="backdoor", num_sybils=5, target=7)]),
        sweep={"defense.kind": ["baseline", "foolsgold"],
               "attacks.0.num_sybils": [1, 2, 3, 4, 5, 6, 7, 8, 9]},
        kind="grid",
    ))
    add(Preset(
        "mixed-data-sweep",
        "5-sybil label-flip with 20-80% poisoned data mixed into honest data.",
        _base("mixed-data-sweep", defense=_fg(), attacks=[_flip(5)]),
        sweep={"attacks.0.poison_fraction": [0.2, 0.4, 0.6, 0.8]},
        kind="grid",
    ))
    add(Preset(
        "batch-sweep",
        "5-sybil label-flip across client batch sizes 1-100.",
        _base("batch-sweep", defense=_fg(), attacks=[_flip(5)]),
        sweep={"sgd.batch_size": [1, 5, 10, 20, 50, 100]},
        kind="grid",
    ))
    add(Preset(
        "ablation-history",
        "History on vs off under high update variance (batch 1, 80% poison).",
        _base("ablation-history", defense=_fg(),
              dataset=DatasetSpec(kind="synthetic", seed=4711, num_classes=10,
                                  num_features=784,
                                  examples_per_class=[650] * 10,
                                  test_fraction=0.23, centroid_sparsity=0.15,
                                  dead_features=196, noise_scale=0.4),
              attacks=[_flip(5, poison_fraction=0.8)],
              sgd=SgdConfig(local_learning_rate=0.05, regularization=1e-4,
                            batch_size=1, local_iterations=1)),
        sweep={"defense.foolsgold.enable_history": [True, False]},
        kind="grid",
    ))
    add(Preset(
        "ablation-pardon",
        "Pardoning on vs off for concurrent rare-class attacks on one target "
        "class (class-imbalanced synthetic data).",
        _base("ablation-pardon",
              dataset=DatasetSpec(kind="synthetic", seed=7, num_classes=10,
                                  num_features=200, centroid_sparsity=0.85,
                                  examples_per_class=[4000, 1200, 1200, 1200,
                                                      1200, 150, 150, 150,
                                                      150, 150]),
              partitioning=PartitionSpec(num_honest=10,
                                         clone_sybil_data=True),
              defense=_fg(),
              attacks=[
                  AttackSpec(type="labelflip", num_sybils=2, source=s, target=0)
                  for s in (5, 6, 7, 8, 9)
              ],
              total_iterations=2000),
        sweep={"defense.foolsgold.enable_pardoning": [True, False]},
        kind="grid",
    ))
    add(Preset(
        "roni-demo",
        "Reject-on-negative-influence scoring on the 5-sybil attack with an "
        "IID validation set (false-positive failure mode).",
        _base("roni-demo",
              defense=DefenseSpec(kind="roni", roni_threshold=0.0,
                                  roni_validation_size=10000),
              attacks=[_flip(5)], total_iterations=1000),
    ))
    add(Preset(
        "strawman-combined",
        "Concurrent 5-sybil and ideal single-adversary attacks against the "
        "similarity defense composed with Multi-Krum (f=1).",
        _base("strawman-combined",
              defense=DefenseSpec(kind="foolsgold_multikrum", f=1,
                                  foolsgold=DefenseConfig()),
              attacks=[_flip(5),
                       AttackSpec(type="strawman", num_sybils=1, source=4,
                                  target=9)]),
    ))
    add(Preset(
        "overhead",
        "Aggregation-step wall clock for 10-50 clients at MNIST dimensions.",
        _base("overhead", defense=_fg(), total_iterations=0),
        kind="overhead",
    ))
    return presets


CATALOG = build_catalog()


def get_preset(name: str) -> Preset:
    try:
        return CATALOG[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown preset {name!r}; available: {', '.join(sorted(CATALOG))}"
        )
