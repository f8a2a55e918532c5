import numpy as np
import pytest

from traceaug.rng import RandomSource


def test_same_seed_same_stream():
    a = RandomSource(1234)
    b = RandomSource(1234)
    assert [a.uniform() for _ in range(50)] == [b.uniform() for _ in range(50)]


def test_scalar_and_vector_paths_agree():
    a = RandomSource(99)
    b = RandomSource(99)
    scalars = np.array([a.uniform() for _ in range(257)])
    assert np.array_equal(scalars, b.uniforms(257))


def test_interleaved_calls_continue_one_stream():
    a = RandomSource(7)
    b = RandomSource(7)
    mixed = [a.uniform()] + list(a.uniforms(4)) + [a.uniform()]
    assert mixed == list(b.uniforms(6))


def test_uniform_range_and_mean():
    u = RandomSource(3).uniforms(200_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.002


def test_randbelow_bounds_and_uniformity():
    r = RandomSource(11)
    draws = np.array([r.randbelow(5) for _ in range(50_000)])
    assert draws.min() == 0 and draws.max() == 4
    freqs = np.bincount(draws) / len(draws)
    assert np.all(np.abs(freqs - 0.2) < 0.01)


def test_randint_inclusive():
    r = RandomSource(0)
    draws = {r.randint(3, 5) for _ in range(200)}
    assert draws == {3, 4, 5}
    assert r.randint(2, 2) == 2


def test_randbelow_rejects_empty_range():
    with pytest.raises(ValueError):
        RandomSource(0).randbelow(0)


def test_spawn_children_are_independent_and_stable():
    root = RandomSource(42)
    again = RandomSource(42)
    assert np.array_equal(root.spawn(5).uniforms(10), again.spawn(5).uniforms(10))
    assert not np.array_equal(root.spawn(0).uniforms(10), root.spawn(1).uniforms(10))
    # spawning never advances the parent stream
    parent_draws = RandomSource(42).uniforms(5)
    root.spawn(17)
    assert np.array_equal(root.uniforms(5), parent_draws)


def test_normals_moments():
    z = RandomSource(8).normals(200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01


def test_shuffle_is_a_permutation_and_deterministic():
    items = list(range(100))
    a, b = items[:], items[:]
    RandomSource(5).shuffle(a)
    RandomSource(5).shuffle(b)
    assert a == b
    assert sorted(a) == items
    assert a != items
