import numpy as np
import pytest

from fltune.errors import ConfigError
from fltune.model import (
    Architecture,
    ModelParams,
    descriptor,
    evaluate,
    init_model,
    local_train,
    loss,
    loss_and_grad,
)
from fltune.population import ClientDataset, ClientPopulation, PopulationSpec, generate_population


def _fd_grad(w, arch, x, y, h=1e-6):
    g = np.zeros_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (loss(w + e, arch, x, y) - loss(w - e, arch, x, y)) / (2 * h)
    return g


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def _random_instance(seed):
    rng = np.random.default_rng(seed)
    d, C = int(rng.integers(1, 6)), int(rng.integers(2, 5))
    kind = "mlp" if seed % 2 else "linear"
    arch = Architecture(kind, d, C, hidden=int(rng.integers(2, 6)) if kind == "mlp" else 0)
    w = rng.normal(scale=0.7, size=arch.num_params)
    x = rng.normal(size=(10, d))
    y = rng.integers(0, C, size=10)
    return arch, w, x, y


def _client(x, y, cid=0):
    return ClientDataset(cid, np.asarray(x, dtype=float), np.asarray(y, dtype=np.int64))


def test_init_deterministic():
    arch = Architecture("mlp", 8, 5, 16)
    assert np.array_equal(init_model(3, arch).w, init_model(3, arch).w)
    assert not np.array_equal(init_model(3, arch).w, init_model(4, arch).w)


def test_param_counts():
    assert init_model(0, Architecture("linear", 4, 3)).w.shape == (15,)
    assert init_model(0, Architecture("mlp", 8, 5, 16)).w.shape == (229,)


def test_bad_dims():
    with pytest.raises(ConfigError):
        Architecture("linear", 0, 3)
    with pytest.raises(ConfigError):
        Architecture("mlp", 3, 3, 0)


def test_descriptor_presets():
    d10 = descriptor("resnet10")
    assert (d10.flops_per_input, d10.num_params) == (12.5e6, 79.7e3)
    d18 = descriptor("resnet18")
    assert (d18.flops_per_input, d18.num_params) == (26.8e6, 177.2e3)
    with pytest.raises(ConfigError):
        descriptor("resnet1000")


def test_descriptor_analytic():
    d = descriptor(Architecture("linear", 4, 3))
    assert d.num_params == 15 and d.flops_per_input == 24
    m = descriptor(Architecture("mlp", 8, 5, 16))
    assert m.num_params == 229 and m.flops_per_input == 2 * (128 + 80)


@pytest.mark.parametrize("seed", range(100))
def test_gradient_matches_finite_differences(seed):
    arch, w, x, y = _random_instance(seed)
    _, g = loss_and_grad(w, arch, x, y)
    assert _rel_err(g, _fd_grad(w, arch, x, y)) <= 1e-4


def test_small_step_never_increases_loss():
    for seed in range(100):
        arch, w, x, y = _random_instance(1000 + seed)
        before, g = loss_and_grad(w, arch, x, y)
        assert loss(w - 1e-4 * g, arch, x, y) <= before


@pytest.mark.parametrize(
    "E,n,B,samples,steps",
    [(1, 10, 5, 10, 2), (0.5, 10, 5, 5, 1), (2, 7, 5, 14, 3), (0.01, 10, 5, 5, 1), (0.5, 1, 5, 1, 1)],
)
def test_local_train_counts(E, n, B, samples, steps):
    arch = Architecture("linear", 2, 2)
    rng = np.random.default_rng(0)
    data = _client(rng.normal(size=(n, 2)), rng.integers(0, 2, size=n))
    rep = local_train(init_model(0, arch), data, E, B, lr=0.01, momentum=0.9, seed=1)
    assert rep.samples_processed == samples
    assert rep.num_local_updates == steps


def test_local_train_deterministic_and_pure():
    arch = Architecture("mlp", 3, 3, 4)
    rng = np.random.default_rng(1)
    data = _client(rng.normal(size=(13, 3)), rng.integers(0, 3, size=13))
    p = init_model(2, arch)
    w0 = p.w.copy()
    a = local_train(p, data, 2, 4, 0.05, 0.9, seed=[5, 6])
    b = local_train(p, data, 2, 4, 0.05, 0.9, seed=[5, 6])
    assert np.array_equal(a.params.w, b.params.w)
    assert a.num_local_updates == b.num_local_updates
    assert np.array_equal(p.w, w0)


def test_local_train_rejects_bad_input():
    arch = Architecture("linear", 2, 2)
    data = _client([[0.0, 0.0]], [0])
    with pytest.raises(ConfigError):
        local_train(init_model(0, arch), data, 1, 0, 0.1)
    with pytest.raises(ConfigError):
        local_train(init_model(0, arch), _client(np.zeros((0, 2)), []), 1, 1, 0.1)


def test_constant_predictor_accuracy():
    arch = Architecture("linear", 2, 3)
    w = np.zeros(arch.num_params)
    arch.unpack(w)[1][:] = [5.0, 0.0, 0.0]
    test = ClientPopulation([_client(np.random.default_rng(0).normal(size=(9, 2)), [0] * 9)], 3)
    assert evaluate(ModelParams(w, arch), test) == 1.0


def test_random_init_is_near_chance():
    accs = []
    for seed in range(10):
        spec = PopulationSpec(seed=seed, K=20, min_points=50, max_points=50, label_skew=1e6, num_classes=5)
        pop = generate_population(spec)
        accs.append(evaluate(init_model(seed, Architecture("mlp", 16, 5, 16)), pop))
    assert abs(np.mean(accs) - 0.2) <= 0.1


@pytest.mark.parametrize("kind", ["linear", "mlp"])
@pytest.mark.parametrize("seed", range(10))
def test_compiled_matches_numpy_reference(kind, seed):
    rng = np.random.default_rng(seed)
    d, C = int(rng.integers(1, 8)), int(rng.integers(2, 6))
    arch = Architecture(kind, d, C, hidden=int(rng.integers(1, 10)) if kind == "mlp" else 0)
    n = int(rng.integers(1, 40))
    data = _client(rng.normal(size=(n, d)), rng.integers(0, C, size=n))
    p = init_model(seed, arch)
    E, B = float(rng.choice([0.5, 1, 2.5, 4])), int(rng.integers(1, 12))
    fast = local_train(p, data, E, B, 0.05, 0.9, seed=seed)
    ref = local_train(p, data, E, B, 0.05, 0.9, seed=seed, reference=True)
    assert fast.num_local_updates == ref.num_local_updates
    assert fast.samples_processed == ref.samples_processed
    assert np.allclose(fast.params.w, ref.params.w, atol=1e-10, rtol=1e-10)
