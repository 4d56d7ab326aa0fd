import collections

from fewshot_mlc.rng import Rng, derive_seed, hash64


def test_same_seed_same_stream():
    a = Rng(42)
    b = Rng(42)
    assert [a.next_u64() for _ in range(100)] == [b.next_u64() for _ in range(100)]


def test_different_seeds_diverge():
    assert Rng(1).next_u64() != Rng(2).next_u64()


def test_known_splitmix64_values():
    # Reference values for seed 1234567 from the published splitmix64
    # algorithm (state += 0x9E3779B97F4A7C15, two xor-multiply mixes).
    rng = Rng(1234567)
    first = rng.next_u64()
    assert 0 <= first < 2**64
    # Recompute by hand to pin the exact mixing constants.
    state = (1234567 + 0x9E3779B97F4A7C15) & (2**64 - 1)
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & (2**64 - 1)
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & (2**64 - 1)
    assert first == z ^ (z >> 31)


def test_random_in_unit_interval():
    rng = Rng(9)
    for _ in range(1000):
        u = rng.random()
        assert 0.0 <= u < 1.0


def test_randint_bounds_and_coverage():
    rng = Rng(5)
    seen = collections.Counter(rng.randint(7) for _ in range(7000))
    assert set(seen) == set(range(7))
    assert min(seen.values()) > 700  # roughly uniform


def test_shuffle_is_permutation():
    rng = Rng(3)
    items = list(range(50))
    shuffled = items[:]
    rng.shuffle(shuffled)
    assert sorted(shuffled) == items
    assert shuffled != items  # astronomically unlikely to be identity


def test_sample_distinct_and_deterministic():
    a = Rng(11).sample(range(100), 10)
    b = Rng(11).sample(range(100), 10)
    assert a == b
    assert len(set(a)) == 10


def test_hash64_stable_and_distinct():
    assert hash64("token") == hash64("token")
    assert hash64("token") != hash64("tokem")
    # FNV-1a of the empty string is the offset basis.
    assert hash64("") == 0xCBF29CE484222325


def test_derive_seed_sensitive_to_parts():
    assert derive_seed(1, "a", "b") != derive_seed(1, "b", "a")
    assert derive_seed(1, "a") != derive_seed(2, "a")
