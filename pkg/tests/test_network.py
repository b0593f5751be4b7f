import math

import numpy as np
import pytest

from pinnllc.network import (
    Checkpoint,
    MlpArchitecture,
    default_architecture,
    hard_constrained_u,
    init_params,
    load_checkpoint,
    mlp_forward,
    param_count,
    save_checkpoint,
)
from pinnllc.problem import default_heat_problem


def test_param_count_examples():
    assert param_count(MlpArchitecture(2, (100, 100, 100), 1)) == 20601
    assert param_count(MlpArchitecture(2, (50, 50), 1)) == 2751
    assert param_count(MlpArchitecture(1, (), 1)) == 2


def test_default_architecture_matches_headline_size():
    assert param_count(default_architecture()) == 20601


def test_architecture_validation():
    with pytest.raises(ValueError):
        MlpArchitecture(2, (0,), 1)
    with pytest.raises(ValueError):
        MlpArchitecture(2, (8,), 1, activation="relu")


def test_init_params_deterministic_and_seed_sensitive():
    arch = MlpArchitecture(2, (100, 100, 100), 1)
    a = init_params(arch, 7)
    b = init_params(arch, 7)
    c = init_params(arch, 8)
    assert a.shape == (20601,)
    assert np.array_equal(a, b)
    # biases are zero, so only weight entries can differ
    differing = np.count_nonzero(a != c)
    nonzero = np.count_nonzero(a != 0.0)
    assert differing >= 0.99 * nonzero


def test_init_params_glorot_bounds():
    arch = MlpArchitecture(2, (8, 8), 1)
    w = init_params(arch, 0)
    limit0 = math.sqrt(6.0 / (2 + 8))
    assert np.max(np.abs(w[:16])) <= limit0
    # the bias slots stay zero
    assert np.all(w[16:24] == 0.0)


def test_zero_params_give_zero_network():
    arch = MlpArchitecture(2, (8, 8), 1)
    w = np.zeros(param_count(arch))
    for x, t in [(0.1, 0.2), (1.5, 1.9), (-0.3, 0.0)]:
        assert mlp_forward(arch, w, x, t) == 0.0


def test_single_hidden_unit_closed_form():
    # layout: [w_x, w_t, b, v, c] computes v*tanh(w_x x + w_t t + b) + c
    arch = MlpArchitecture(2, (1,), 1)
    w1, w2, b, v, c = 0.7, -1.2, 0.3, 2.0, -0.5
    w = np.array([w1, w2, b, v, c])
    rng = np.random.default_rng(4)
    for _ in range(5):
        x, t = rng.uniform(-1.0, 2.0, size=2)
        want = v * math.tanh(w1 * x + w2 * t + b) + c
        assert abs(mlp_forward(arch, w, x, t) - want) < 1e-14


def test_forward_batched_matches_scalar():
    arch = MlpArchitecture(2, (8, 8), 1)
    w = init_params(arch, 3)
    rng = np.random.default_rng(5)
    xs = rng.uniform(0.0, 2.0, size=9)
    ts = rng.uniform(0.0, 2.0, size=9)
    batch = mlp_forward(arch, w, xs, ts)
    for i in range(9):
        assert abs(batch[i] - mlp_forward(arch, w, xs[i], ts[i])) < 1e-14


def test_forward_is_continuous():
    arch = MlpArchitecture(2, (8, 8), 1)
    rng = np.random.default_rng(6)
    for _ in range(10):
        w = rng.normal(size=param_count(arch))
        x, t = rng.uniform(0.0, 2.0, size=2)
        assert abs(mlp_forward(arch, w, x + 1e-9, t) - mlp_forward(arch, w, x, t)) < 1e-6


def test_forward_rejects_wrong_length():
    arch = MlpArchitecture(2, (8,), 1)
    with pytest.raises(ValueError):
        mlp_forward(arch, np.zeros(param_count(arch) + 1), 0.5, 0.5)
    with pytest.raises(ValueError):
        mlp_forward(arch, np.zeros(param_count(arch) - 1), 0.5, 0.5)


def test_forward_reads_exactly_the_declared_segments():
    # instrument slicing to confirm the layout walks the whole vector once
    arch = MlpArchitecture(2, (5, 3), 1)
    n = param_count(arch)

    class Probe:
        def __init__(self, w):
            self.w = w
            self.stops = []

        def __getitem__(self, s):
            self.stops.append((s.start, s.stop))
            return self.w[s]

    probe = Probe(np.arange(n, dtype=float) * 1e-3)
    from pinnllc.network import forward_core

    forward_core(arch, probe, 0.3, 0.7)
    covered = sorted(probe.stops)
    assert max(stop for _, stop in covered) == n
    seen = np.zeros(n, dtype=int)
    for a, b in covered:
        seen[a:b] += 1
    assert np.all(seen == 1)


def test_constraints_hold_for_random_params():
    problem = default_heat_problem()
    arch = MlpArchitecture(2, (8, 8), 1)
    rng = np.random.default_rng(11)
    for _ in range(100):
        w = rng.normal(size=param_count(arch))
        t = rng.uniform(0.0, problem.t_max)
        x = rng.uniform(problem.x_lo, problem.x_hi)
        assert abs(hard_constrained_u(problem, arch, w, x, 0.0) - math.sin(math.pi * x)) <= 1e-12
        assert abs(hard_constrained_u(problem, arch, w, problem.x_lo, t)) <= 1e-12
        assert abs(hard_constrained_u(problem, arch, w, problem.x_hi, t)) <= 1e-12


def test_unit_mask_fails_at_right_boundary():
    # the unit-interval mask x(x-1) is kept selectable but does not vanish
    # at x=2, so the constrained form loses the boundary there
    problem = default_heat_problem()
    arch = MlpArchitecture(2, (8,), 1)
    rng = np.random.default_rng(13)
    w = rng.normal(size=param_count(arch))
    assert abs(hard_constrained_u(problem, arch, w, 2.0, 1.0, mask="unit")) > 1e-6
    assert abs(hard_constrained_u(problem, arch, w, 1.0, 1.0, mask="unit")) <= 1e-12


def test_zero_params_reduce_ansatz_to_initial_condition():
    problem = default_heat_problem()
    arch = MlpArchitecture(2, (8,), 1)
    w = np.zeros(param_count(arch))
    xs = np.linspace(0.0, 2.0, 21)
    u = hard_constrained_u(problem, arch, w, xs, np.full_like(xs, 1.3))
    assert np.max(np.abs(u - np.sin(math.pi * xs))) < 1e-15


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    arch = MlpArchitecture(2, (8, 8), 1)
    w = init_params(arch, 42)
    path = tmp_path / "ckpt_00000.bin"
    save_checkpoint(path, arch, w, seed=42, iteration=17, extra={"note": "tmp"})
    ck = load_checkpoint(path)
    assert isinstance(ck, Checkpoint)
    assert ck.arch == arch
    assert ck.seed == 42 and ck.iteration == 17
    assert ck.extra == {"note": "tmp"}
    assert np.array_equal(ck.params, w)
    assert ck.params.tobytes() == w.tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTMAGIC" + b"{}\n")
    with pytest.raises(ValueError):
        load_checkpoint(bad)
    trunc = tmp_path / "trunc.bin"
    arch = MlpArchitecture(2, (4,), 1)
    w = init_params(arch, 1)
    save_checkpoint(trunc, arch, w, seed=1, iteration=0)
    data = trunc.read_bytes()
    trunc.write_bytes(data[:-8])
    with pytest.raises(ValueError):
        load_checkpoint(trunc)


def test_forward_invariant_under_checkpoint_round_trip(tmp_path):
    problem = default_heat_problem()
    arch = MlpArchitecture(2, (8, 8), 1)
    w = init_params(arch, 9)
    path = tmp_path / "c.bin"
    save_checkpoint(path, arch, w, seed=9, iteration=0)
    w2 = load_checkpoint(path).params
    xs = np.linspace(0.0, 2.0, 7)
    ts = np.linspace(0.0, 2.0, 7)
    a = hard_constrained_u(problem, arch, w, xs, ts)
    b = hard_constrained_u(problem, arch, w2, xs, ts)
    assert np.array_equal(a, b)
