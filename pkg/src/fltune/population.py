"""Seeded synthetic federated populations.

Clients are unbalanced (per-client point counts follow a truncated discrete
power law) and non-IID (each client draws its label mixture from a symmetric
Dirichlet). Features are class-conditional Gaussians around class means that
are shared by every client, so the train and test halves describe one task.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

POPULATION_FORMAT_VERSION = 1

# Sub-stream tags for np.random.default_rng([seed, tag, ...]).
_COUNTS, _MEANS, _MIXTURE, _LABELS, _FEATURES, _SPLIT = range(6)


@dataclass(frozen=True)
class PopulationSpec:
    seed: int = 0
    K: int = 100
    min_points: int = 1
    max_points: int = 316
    shape: float = 1.5
    label_skew: float = 1.0
    feature_dim: int = 16
    num_classes: int = 10
    class_separation: float = 3.0

    def validate(self) -> None:
        if self.K < 1:
            raise ConfigError("must be >= 1", "K")
        if self.min_points < 1:
            raise ConfigError("must be >= 1", "min_points")
        if self.max_points < self.min_points:
            raise ConfigError("must be >= min_points", "max_points")
        if not self.shape >= 0:
            raise ConfigError("must be >= 0", "shape")
        if not self.label_skew > 0:
            raise ConfigError("concentration must be > 0", "label_skew")
        if self.feature_dim < 1:
            raise ConfigError("must be >= 1", "feature_dim")
        if self.num_classes < 1:
            raise ConfigError("must be >= 1", "num_classes")
        if not self.class_separation > 0:
            raise ConfigError("must be > 0", "class_separation")


@dataclass(frozen=True, eq=False)
class ClientDataset:
    client_id: int
    x: np.ndarray  # (n_k, d) float64
    y: np.ndarray  # (n_k,) int64

    @property
    def n_k(self) -> int:
        return len(self.y)

    @property
    def points(self) -> list[tuple[np.ndarray, int]]:
        return [(self.x[i], int(self.y[i])) for i in range(self.n_k)]


@dataclass(eq=False)
class ClientPopulation:
    clients: list[ClientDataset]
    num_classes: int
    spec: PopulationSpec | None = None
    _stacked: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def num_clients(self) -> int:
        return len(self.clients)

    @property
    def total_points(self) -> int:
        return sum(c.n_k for c in self.clients)

    @property
    def counts(self) -> np.ndarray:
        return np.array([c.n_k for c in self.clients], dtype=np.int64)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All points concatenated in client order (cached)."""
        if self._stacked is None:
            self._stacked = (
                np.concatenate([c.x for c in self.clients]),
                np.concatenate([c.y for c in self.clients]),
            )
        return self._stacked

    def label_histogram(self) -> np.ndarray:
        return np.bincount(self.stacked()[1], minlength=self.num_classes)


def power_law_counts(rng: np.random.Generator, K: int, lo: int, hi: int, shape: float) -> np.ndarray:
    support = np.arange(lo, hi + 1)
    weights = support.astype(np.float64) ** -shape
    return rng.choice(support, size=K, p=weights / weights.sum())


def _apportion(rng: np.random.Generator, n: int, probs: np.ndarray) -> np.ndarray:
    # Systematic rounding: each count is within one of n * p, the total is
    # exactly n, and a single-point client gets class c with probability p_c.
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    edges = np.floor(n * cum + rng.random()).astype(np.int64)
    return np.diff(edges, prepend=0)


def generate_population(spec: PopulationSpec) -> ClientPopulation:
    spec.validate()
    C, d = spec.num_classes, spec.feature_dim

    counts = power_law_counts(
        np.random.default_rng([spec.seed, _COUNTS]), spec.K, spec.min_points, spec.max_points, spec.shape
    )
    means = np.random.default_rng([spec.seed, _MEANS]).standard_normal((C, d))
    means *= spec.class_separation / np.sqrt(d)
    mixtures = np.random.default_rng([spec.seed, _MIXTURE]).dirichlet(np.full(C, spec.label_skew), size=spec.K)
    # Very large concentrations can underflow to an all-zero row on some platforms.
    mixtures = np.nan_to_num(mixtures, nan=1.0 / C)

    clients = []
    for k in range(spec.K):
        n_k = int(counts[k])
        label_rng = np.random.default_rng([spec.seed, _LABELS, k])
        per_class = _apportion(label_rng, n_k, mixtures[k] / mixtures[k].sum())
        y = np.repeat(np.arange(C, dtype=np.int64), per_class)
        label_rng.shuffle(y)
        noise = np.random.default_rng([spec.seed, _FEATURES, k]).standard_normal((n_k, d))
        clients.append(ClientDataset(client_id=k, x=means[y] + noise, y=y))
    return ClientPopulation(clients=clients, num_classes=C, spec=spec)


def split_train_test(
    population: ClientPopulation, test_fraction: float, seed: int
) -> tuple[ClientPopulation, ClientPopulation]:
    """Split by client id; no client contributes points to both sides."""
    K = population.num_clients
    if K < 2:
        raise ConfigError("need at least 2 clients to split", "K")
    if not 0 < test_fraction < 1:
        raise ConfigError("must lie in (0, 1)", "test_fraction")
    n_test = int(round(K * test_fraction))
    if n_test == 0 or n_test == K:
        raise ConfigError(f"fraction {test_fraction} leaves an empty side for K={K}", "test_fraction")
    order = np.random.default_rng([seed, _SPLIT]).permutation(K)
    test_idx = set(order[:n_test].tolist())
    train = [c for i, c in enumerate(population.clients) if i not in test_idx]
    test = [c for i, c in enumerate(population.clients) if i in test_idx]
    return (
        ClientPopulation(train, population.num_classes, population.spec),
        ClientPopulation(test, population.num_classes, population.spec),
    )


def dump_population(population: ClientPopulation, path: str | Path) -> None:
    doc = {
        "version": POPULATION_FORMAT_VERSION,
        "spec": asdict(population.spec) if population.spec is not None else None,
        "num_classes": population.num_classes,
        "clients": [
            {"client_id": c.client_id, "x": c.x.tolist(), "y": c.y.tolist()} for c in population.clients
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_population(path: str | Path) -> ClientPopulation:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != POPULATION_FORMAT_VERSION:
        raise ConfigError(f"unsupported population file version {doc.get('version')!r}", "version")
    spec = PopulationSpec(**doc["spec"]) if doc.get("spec") else None
    clients = [
        ClientDataset(
            client_id=int(c["client_id"]),
            x=np.asarray(c["x"], dtype=np.float64).reshape(len(c["y"]), -1),
            y=np.asarray(c["y"], dtype=np.int64),
        )
        for c in doc["clients"]
    ]
    return ClientPopulation(clients, int(doc["num_classes"]), spec)
