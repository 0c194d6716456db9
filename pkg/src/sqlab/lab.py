"""Collision behaviour of aggregation functions on simulated hash multisets."""

from __future__ import annotations

import itertools
import json
import random
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import aggregates
from .aggregates import ASSOCIATIVE, ORDERED_SET, PARTIAL_RANGE_RANKING, aggregate

FULL_FUNCTIONS = (
    "checksum_agg",
    "modular_sum",
    "bit_xor",
    "avg",
    "iqr",
    "quartile_3",
    "median",
    "quartile_1",
    "min",
    "max",
    "count",
    "bit_or",
    "bit_and",
)
REDUCED_FUNCTIONS = tuple(PARTIAL_RANGE_RANKING)

PERTURBATIONS = ("remove_1", "remove_2", "flip_1", "flip_2")


@dataclass(frozen=True)
class PopulationSpec:
    hash_bits: int
    token_bits: int
    n_individuals: int
    max_set_size: int
    variant_plan: str
    rng_seed: int = 0
    base_fraction: float = 0.9
    null_fraction: float = 0.1
    null_share: float = 0.5

    def __post_init__(self) -> None:
        if self.variant_plan not in ("full", "reduced"):
            raise ValueError(f"unknown plan {self.variant_plan!r}")
        if not 0 <= self.rng_seed < 1 << 64:
            raise ValueError("rng_seed must be an unsigned 64-bit integer")
        if self.max_set_size < 3:
            raise ValueError("max_set_size must allow removing two elements")

    @classmethod
    def full(cls, seed: int = 0) -> "PopulationSpec":
        return cls(16, 16, 1000, 100, "full", seed)

    @classmethod
    def reduced(cls, seed: int = 0) -> "PopulationSpec":
        return cls(10, 16, 500, 50, "reduced", seed)

    @classmethod
    def for_plan(cls, plan: str, seed: int = 0) -> "PopulationSpec":
        if plan == "full":
            return cls.full(seed)
        if plan == "reduced":
            return cls.reduced(seed)
        raise ValueError(f"unknown plan {plan!r}")

    @property
    def n_base(self) -> int:
        return round(self.n_individuals * self.base_fraction)

    @property
    def n_variants(self) -> int:
        return self.n_individuals - self.n_base

    @property
    def fallback(self) -> int:
        # Stand-in for coalesced NULLs: a quarter of the hash upper bound.
        return (1 << self.hash_bits) // 4

    @property
    def functions(self) -> tuple[str, ...]:
        return FULL_FUNCTIONS if self.variant_plan == "full" else REDUCED_FUNCTIONS


def generate_population(spec: PopulationSpec) -> list[list[int]]:
    """Base individuals followed by their perturbed variants.

    Every variant i applies perturbation ``i % 4`` to the ``i // 4``-th
    selected base individual, so four consecutive variants share a parent.
    """
    rng = np.random.default_rng(spec.rng_seed)
    upper = 1 << spec.hash_bits
    base: list[list[int]] = []
    for _ in range(spec.n_base):
        # Half-open like numpy's own bound: the reported count collisions
        # (above 900 of 1000, above 450 of 500) need fewer distinct sizes
        # than max_set_size.
        size = int(rng.integers(1, spec.max_set_size))
        base.append([int(v) for v in rng.choice(upper, size=size, replace=False)])

    n_null = round(spec.n_base * spec.null_fraction)
    for index in rng.choice(spec.n_base, size=n_null, replace=False):
        individual = base[int(index)]
        k = int(len(individual) * spec.null_share)
        for position in rng.choice(len(individual), size=k, replace=False):
            individual[int(position)] = spec.fallback

    n_parents = -(-spec.n_variants // len(PERTURBATIONS))
    eligible = [i for i, ind in enumerate(base) if len(ind) >= 3]
    parents = [eligible[int(i)] for i in rng.choice(len(eligible), size=n_parents, replace=False)]
    variants = []
    for i in range(spec.n_variants):
        parent = list(base[parents[i // len(PERTURBATIONS)]])
        variants.append(_perturb(parent, PERTURBATIONS[i % len(PERTURBATIONS)], spec.hash_bits, rng))
    return base + variants


def _perturb(individual: list[int], how: str, hash_bits: int, rng: np.random.Generator) -> list[int]:
    if how.startswith("remove"):
        for _ in range(int(how[-1])):
            individual.pop(int(rng.integers(len(individual))))
    else:
        n = int(how[-1])
        for position in rng.choice(len(individual), size=n, replace=False):
            individual[int(position)] ^= 1 << int(rng.integers(hash_bits))
    return individual


@dataclass
class FunctionOutcome:
    fn_id: str
    outcomes: list[int]
    collisions: int
    histogram: list[int]


@dataclass
class SimulationReport:
    spec: PopulationSpec
    header: dict
    results: dict[str, FunctionOutcome] = field(default_factory=dict)

    def collisions(self) -> dict[str, int]:
        return {fn: r.collisions for fn, r in self.results.items()}

    def ranking(self) -> list[str]:
        return sorted(self.results, key=lambda fn: (self.results[fn].collisions, fn))

    def to_dict(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "header": self.header,
            "collisions": self.collisions(),
            "results": {fn: asdict(r) for fn, r in self.results.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


N_BUCKETS = 64


def run_simulation(spec: PopulationSpec, fn_ids: Sequence[str] | None = None) -> SimulationReport:
    population = generate_population(spec)
    fn_ids = tuple(fn_ids or spec.functions)
    token_range = 1 << spec.token_bits
    report = SimulationReport(
        spec=spec,
        header={
            "rng": "numpy PCG64 (default_rng)",
            "set_sampling": "uniform size in [1, max_set_size), values drawn without replacement",
            "bit_flip_position": f"uniform over the {spec.hash_bits} hash bits",
            "quartiles": "linear interpolation between closest ranks",
            "float_outcomes": "truncated toward zero",
            "variant_assignment": "variant i applies perturbation i % 4 to selected parent i // 4",
        },
    )
    for fn_id in fn_ids:
        outcomes = [aggregate(fn_id, individual, spec.token_bits) for individual in population]
        histogram, _ = np.histogram(outcomes, bins=N_BUCKETS, range=(0, token_range))
        report.results[fn_id] = FunctionOutcome(
            fn_id=fn_id,
            outcomes=outcomes,
            collisions=len(outcomes) - len(set(outcomes)),
            histogram=[int(c) for c in histogram],
        )
    return report


def find_associativity_counterexample(fn_id: str, max_value: int = 6, trials: int = 2000, seed: int = 0):
    """Search a split A(x1..A(xj..xk)..xn) != A(x1..xn); None when none is found.

    Exhaustive over triples of small integers first, then random splits.
    """

    def split_differs(values: list[int], j: int, k: int) -> bool:
        inner = aggregate(fn_id, values[j:k])
        folded = values[:j] + [inner] + values[k:]
        return aggregate(fn_id, folded) != aggregate(fn_id, values)

    for triple in itertools.product(range(max_value + 1), repeat=3):
        values = list(triple)
        for j, k in ((0, 2), (1, 3)):
            if split_differs(values, j, k):
                return values, (j, k)
    rng = random.Random(seed)
    for _ in range(trials):
        values = [rng.randrange(1 << 16) for _ in range(rng.randint(2, 12))]
        j = rng.randrange(len(values))
        k = rng.randint(j + 1, len(values))
        if split_differs(values, j, k):
            return values, (j, k)
    return None


def classify_associativity(fn_id: str) -> str:
    if fn_id not in aggregates.ROSTER:
        raise ValueError(f"unknown aggregation function {fn_id!r}")
    return "associative" if fn_id in ASSOCIATIVE else "non-associative"


class Recommendation(NamedTuple):
    """Window function for one-stage formulas, and (outer, inner) for two stages."""

    fw: str
    composition: tuple[str, str]


class NoValidPair(ValueError):
    pass


def recommend_pair(available_fns: Iterable[str]) -> Recommendation:
    """Pick f_w and the f_w(f_a()) composition from the available functions.

    Take the leftmost available function of the partial-range ranking. If it
    is non-associative it serves both stages; otherwise pair it with the next
    usable one, keeping ``bit_xor`` out of the inner stage and refusing
    (sum, count).
    """
    available = set(available_fns)
    if not available:
        raise NoValidPair("no aggregation function available")
    ranked = [fn for fn in PARTIAL_RANGE_RANKING if fn in available]
    if not ranked:
        raise NoValidPair(f"none of {sorted(available)} is ranked")
    first = ranked[0]
    if first not in ASSOCIATIVE:
        return Recommendation(first, (first, first))
    for second in ranked[1:]:
        if second in ORDERED_SET:
            continue
        outer, inner = first, second
        if inner == "bit_xor":
            outer, inner = inner, outer
        if {outer, inner} == {"sum", "count"} or inner == "bit_xor" or outer == inner:
            continue
        return Recommendation(first, (outer, inner))
    raise NoValidPair(f"no valid second function among {sorted(available)}")


def write_plots(report: SimulationReport, directory) -> list[str]:
    """Strip plot of outcome densities and a collision bar chart, as SVG files."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    order = report.ranking()
    jitter = np.random.default_rng(report.spec.rng_seed)
    plt.rcParams["svg.hashsalt"] = str(report.spec.rng_seed)

    fig, ax = plt.subplots(figsize=(9, 0.45 * len(order) + 1))
    for row, fn in enumerate(order):
        xs = report.results[fn].outcomes
        ys = row + jitter.uniform(-0.3, 0.3, size=len(xs))
        ax.scatter(xs, ys, s=2, alpha=0.4)
    ax.set_yticks(range(len(order)), order)
    ax.set_xlim(0, 1 << report.spec.token_bits)
    ax.set_xlabel("outcome")
    strip = directory / f"densities_{report.spec.variant_plan}.svg"
    fig.tight_layout()
    fig.savefig(strip, metadata={"Date": None})
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(9, 4))
    counts = [report.results[fn].collisions for fn in order]
    ax.bar(order, counts)
    ax.set_ylabel(f"collisions among {report.spec.n_individuals}")
    ax.tick_params(axis="x", rotation=60)
    bars = directory / f"collisions_{report.spec.variant_plan}.svg"
    fig.tight_layout()
    fig.savefig(bars, metadata={"Date": None})
    plt.close(fig)
    return [str(strip), str(bars)]


def collision_counter(report: SimulationReport) -> Counter:
    return Counter(report.collisions())
