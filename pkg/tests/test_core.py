import numpy as np
import pytest
from hypothesis import given, strategies as st

from lossaudit.core import (Dataset, SeedSpec, SignalMatrix, ValidationError, dataset_fingerprint, derive_seed,
                            fnv1a64, splitmix64, validate_matrix)


def test_splitmix64_reference_values():
    # first outputs of the canonical SplitMix64 generator seeded with 0
    state = 0
    outs = []
    for _ in range(3):
        outs.append(splitmix64(state))
        state = (state + 0x9E3779B97F4A7C15) & ((1 << 64) - 1)
    assert outs == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_fnv1a64_reference_values():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C


def test_derive_seed_is_deterministic():
    assert derive_seed(0, []) == derive_seed(0, [])
    assert derive_seed(0, []) == splitmix64(0)


def test_distinct_paths_give_distinct_seeds():
    assert derive_seed(42, [("shadow", 0)]) != derive_seed(42, [("shadow", 1)])
    assert derive_seed(42, [("shadow", 0)]) != derive_seed(42, [("reference", 0)])
    assert derive_seed(42, [("a", 0), ("b", 1)]) != derive_seed(42, [("b", 1), ("a", 0)])


def test_avalanche_on_adjacent_indices():
    flips = [bin(derive_seed(7, [("trial", i)]) ^ derive_seed(7, [("trial", i + 1)])).count("1")
             for i in range(10_000)]
    assert 20 <= np.mean(flips) <= 44


@given(st.integers(0, 2**64 - 1), st.lists(st.tuples(st.text(max_size=8), st.integers(0, 2**32)), max_size=4))
def test_derivation_is_referentially_transparent(root, path):
    assert derive_seed(root, path) == derive_seed(root, list(path))
    assert 0 <= derive_seed(root, path) < 2**64


def test_seedspec_child_and_rng():
    s = SeedSpec(3).child("x", 2)
    assert s.path == (("x", 2),)
    assert s.value == derive_seed(3, [("x", 2)])
    assert s.rng().integers(0, 1 << 30) == SeedSpec(3).child("x", 2).rng().integers(0, 1 << 30)


def test_dataset_rejects_duplicates_and_fingerprint_is_order_free():
    with pytest.raises(ValidationError):
        Dataset((1, 2, 2), "p")
    assert Dataset((3, 1, 2), "p").fingerprint == Dataset((1, 2, 3), "p").fingerprint
    assert dataset_fingerprint([1, 2]) != dataset_fingerprint([1, 3])
    d = Dataset((5, 6, 7), "p")
    assert d.without(6).record_ids == (5, 7)
    assert d.with_record(9).id_set == {5, 6, 7, 9}


def test_validate_matrix_ok():
    m = SignalMatrix(["a", "b"], [0, 1, 2], np.full((2, 3), 0.5))
    assert validate_matrix(m) is None


def test_validate_matrix_negative_value():
    vals = np.full((2, 3), 0.5)
    vals[0, 1] = -0.1
    assert validate_matrix(SignalMatrix(["a", "b"], [0, 1, 2], vals)) == "negative value at (0,1)"


def test_validate_matrix_membership_shape():
    m = SignalMatrix(["a", "b"], [0, 1, 2], np.full((2, 3), 0.5), membership=np.zeros((3, 2)))
    assert "membership shape" in validate_matrix(m)


@pytest.mark.parametrize("model_ids,record_ids,values,needle", [
    (["a", "b"], [0, 1], np.ones((3, 2)), "shape"),
    (["a", "a"], [0, 1], np.ones((2, 2)), "duplicate model id"),
    (["a", "b"], [0, 0], np.ones((2, 2)), "duplicate record id"),
    (["a", "b"], [0, 1], np.array([[1.0, np.inf], [1.0, 1.0]]), "non-finite value at (0,1)"),
])
def test_validate_matrix_violations(model_ids, record_ids, values, needle):
    assert needle in validate_matrix(SignalMatrix(model_ids, record_ids, values))
