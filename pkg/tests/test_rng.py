import numpy as np
import pytest

from deconfounder.rng import RngStream, as_stream


def test_generator_replays():
    s = RngStream(7).child("a", 3)
    np.testing.assert_array_equal(s.generator().random(5), s.generator().random(5))


def test_children_are_distinct():
    root = RngStream(7)
    draws = {tuple(root.child(k).generator().integers(0, 2**32, 4)) for k in ("x", "y", 0, 1)}
    assert len(draws) == 4


def test_spawn_matches_child():
    root = RngStream(11)
    for i, s in enumerate(root.spawn(3)):
        assert s == root.child(i)


def test_string_keys_are_stable():
    # the digest, not Python's salted hash, keys string children
    assert RngStream(1).child("fit").path == RngStream(1).child("fit").path
    assert RngStream(1).child("fit").integer_seed() == RngStream(1).child("fit").integer_seed()


def test_as_stream_and_validation():
    assert as_stream(None, 5) == RngStream(5)
    assert as_stream(9) == RngStream(9)
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(TypeError):
        RngStream(0).child(1.5)
