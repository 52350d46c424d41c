from collections import Counter

import pytest

from spatialrel.rng import SplitMix64, derive_seed


def test_reference_vector():
    g = SplitMix64(1234567)
    assert [g.next_u64() for _ in range(5)] == [
        6457827717110365317,
        3203168211198807973,
        9817491932198370423,
        4593380528125082431,
        16408922859458223821,
    ]


def test_derive_seed_is_stable():
    assert derive_seed(0) == int.from_bytes(bytes.fromhex("5feceb66ffc86f38"), "big")  # sha256("0")
    assert derive_seed(7, "render", "T1:s:a+b") == derive_seed(7, "render", "T1:s:a+b")
    assert derive_seed(7, "a", "b") != derive_seed(7, "a|b", "")
    assert 0 <= derive_seed(123, "x") < 2**64


def test_below_bounds_and_errors():
    g = SplitMix64(1)
    draws = [g.below(6) for _ in range(6000)]
    assert set(draws) == set(range(6))
    assert min(Counter(draws).values()) > 850
    with pytest.raises(ValueError):
        g.below(0)


def test_uniform_and_randint():
    g = SplitMix64(2)
    xs = [g.uniform() for _ in range(1000)]
    assert all(0.0 <= x < 1.0 for x in xs)
    assert {g.randint(3, 5) for _ in range(200)} == {3, 4, 5}


def test_shuffle_is_a_permutation_and_reproducible():
    a, b = list(range(20)), list(range(20))
    SplitMix64(9).shuffle(a)
    SplitMix64(9).shuffle(b)
    assert a == b and sorted(a) == list(range(20)) and a != list(range(20))


def test_shuffle_draw_order():
    # backward Fisher-Yates: j_i = below(i + 1) for i = n-1 .. 1
    seq = list("abcd")
    ref = SplitMix64(5)
    js = [ref.below(i + 1) for i in (3, 2, 1)]
    want = list("abcd")
    for i, j in zip((3, 2, 1), js):
        want[i], want[j] = want[j], want[i]
    SplitMix64(5).shuffle(seq)
    assert seq == want
