import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fltune.errors import ConfigError
from fltune.population import (
    PopulationSpec,
    dump_population,
    generate_population,
    load_population,
    split_train_test,
)

GOLDEN = Path(__file__).parent / "golden"


def test_single_client_degenerate():
    pop = generate_population(PopulationSpec(seed=0, K=1, min_points=5, max_points=5))
    assert pop.num_clients == 1
    assert pop.total_points == 5
    assert pop.clients[0].n_k == 5


def test_iid_limit_matches_global_histogram():
    spec = PopulationSpec(seed=3, K=20, min_points=200, max_points=200, label_skew=1e6, num_classes=10)
    pop = generate_population(spec)
    global_hist = pop.label_histogram() / pop.total_points
    for c in pop.clients:
        local = np.bincount(c.y, minlength=10) / c.n_k
        assert np.max(np.abs(local - global_hist)) <= 0.05


def test_power_law_counts_golden():
    spec = PopulationSpec(seed=7, K=100, min_points=1, max_points=316, shape=1.5)
    counts = generate_population(spec).counts
    frozen = json.loads((GOLDEN / "population_seed7_counts.json").read_text())
    assert counts.tolist() == frozen
    assert np.mean(counts == 1) >= 0.30
    assert counts.max() >= 50


@pytest.mark.parametrize("field,value", [("K", 0), ("min_points", 0), ("label_skew", 0.0), ("max_points", 0)])
def test_invalid_spec_names_field(field, value):
    spec = PopulationSpec(**{field: value})
    with pytest.raises(ConfigError) as err:
        generate_population(spec)
    assert err.value.field == field


def test_regeneration_is_bit_identical():
    spec = PopulationSpec(seed=11, K=30)
    a, b = generate_population(spec), generate_population(spec)
    for ca, cb in zip(a.clients, b.clients):
        assert ca.client_id == cb.client_id
        assert np.array_equal(ca.x, cb.x) and np.array_equal(ca.y, cb.y)


def test_feature_dims_and_labels_in_range():
    pop = generate_population(PopulationSpec(seed=2, K=25, feature_dim=6, num_classes=4))
    for c in pop.clients:
        assert c.x.shape == (c.n_k, 6)
        assert c.n_k >= 1
        assert c.y.min() >= 0 and c.y.max() < 4
    assert pop.total_points == sum(c.n_k for c in pop.clients)


@pytest.mark.parametrize("seed", range(5))
def test_unbalanced_ratio(seed):
    counts = generate_population(PopulationSpec(seed=seed, K=50, shape=1.5)).counts
    assert counts.max() / counts.min() > 10


def test_split_halves():
    pop = generate_population(PopulationSpec(seed=1, K=10))
    train, test = split_train_test(pop, 0.5, seed=4)
    assert train.num_clients == 5 and test.num_clients == 5
    ids_tr = {c.client_id for c in train.clients}
    ids_te = {c.client_id for c in test.clients}
    assert not ids_tr & ids_te
    assert ids_tr | ids_te == set(range(10))


def test_split_deterministic():
    pop = generate_population(PopulationSpec(seed=1, K=40))
    a = split_train_test(pop, 0.3, seed=9)
    b = split_train_test(pop, 0.3, seed=9)
    assert [c.client_id for c in a[1].clients] == [c.client_id for c in b[1].clients]


def test_split_sizes_like_speech_commands():
    pop = generate_population(PopulationSpec(seed=0, K=2618, min_points=1, max_points=3, feature_dim=2))
    train, test = split_train_test(pop, 506 / 2618, seed=0)
    assert (train.num_clients, test.num_clients) == (2112, 506)


@pytest.mark.parametrize("fraction", [0.01, 0.99, 0.0, 1.0])
def test_split_empty_side_rejected(fraction):
    pop = generate_population(PopulationSpec(seed=1, K=10))
    with pytest.raises(ConfigError):
        split_train_test(pop, fraction, seed=0)


def test_split_needs_two_clients():
    pop = generate_population(PopulationSpec(seed=1, K=1))
    with pytest.raises(ConfigError):
        split_train_test(pop, 0.5, seed=0)


@settings(max_examples=25, deadline=None)
@given(K=st.integers(2, 60), frac=st.floats(0.05, 0.95), seed=st.integers(0, 2**16))
def test_split_conserves_points(K, frac, seed):
    pop = generate_population(PopulationSpec(seed=seed, K=K, max_points=20, feature_dim=2))
    try:
        train, test = split_train_test(pop, frac, seed)
    except ConfigError:
        return
    assert train.total_points + test.total_points == pop.total_points


def test_json_round_trip(tmp_path):
    pop = generate_population(PopulationSpec(seed=5, K=6, max_points=12, feature_dim=3))
    dump_population(pop, tmp_path / "pop.json")
    back = load_population(tmp_path / "pop.json")
    assert back.spec == pop.spec
    for a, b in zip(pop.clients, back.clients):
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
