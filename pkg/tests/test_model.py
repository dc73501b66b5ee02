import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from cachejt.model import (
    ContentCatalog,
    NetworkParams,
    PlacementVector,
    db_to_linear,
    linear_to_db,
    validate_placement,
    zipf_popularity,
)


def test_zipf_uniform():
    assert np.allclose(zipf_popularity(4, 0.0), 0.25)


def test_zipf_gamma_one():
    assert np.allclose(zipf_popularity(4, 1.0), [0.48, 0.24, 0.16, 0.12], atol=1e-12)


def test_zipf_eight_files_gamma_two():
    a = zipf_popularity(8, 2.0)
    # normalizer sum_{n<=8} n^-2 = 1.527422...
    assert a[0] == pytest.approx(1.0 / 1.527422052154195, rel=1e-14)
    assert a[0] == pytest.approx(oracles.zipf_direct(8, 2.0)[0], rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 3000), gamma=st.floats(0.0, 4.0))
def test_zipf_normalized_and_nonincreasing(n, gamma):
    a = zipf_popularity(n, gamma)
    assert abs(math.fsum(a) - 1.0) <= 1e-12
    assert np.all(np.diff(a) <= 1e-18)


def test_catalog_popularity_readonly():
    c = ContentCatalog(10, 0.8)
    with pytest.raises(ValueError):
        c.popularity[0] = 1.0


@pytest.mark.parametrize("kw", [dict(alpha=2.0), dict(lambda_b=0.0), dict(m_coop=0), dict(tau=-1.0),
                                dict(m_coop=1.5)])
def test_network_params_rejects(kw):
    with pytest.raises(ValueError):
        NetworkParams(**kw)


def test_db_conversion_roundtrip():
    assert db_to_linear(0.0) == 1.0
    assert db_to_linear(10.0) == pytest.approx(10.0)
    assert NetworkParams.from_db(-6.0).tau_db == pytest.approx(-6.0)
    assert np.allclose(linear_to_db(db_to_linear(np.array([-10.0, 3.0]))), [-10.0, 3.0])


def test_from_rate():
    assert NetworkParams.from_rate(1.0).tau == pytest.approx(1.0)


def test_validate_placement_ok():
    assert validate_placement(PlacementVector([1, 1, 0, 0], 2)) == []


def test_validate_placement_sum():
    v = validate_placement(PlacementVector([0.5] * 4, 3))
    assert [x.kind for x in v] == ["sum"]
    assert v[0].magnitude == pytest.approx(1.0)


def test_validate_placement_box():
    v = validate_placement(PlacementVector([1.2, 0.8], 2))
    kinds = {(x.kind, x.index) for x in v}
    assert ("box", 1) in kinds
    assert "box violation at index 1" in str(next(x for x in v if x.kind == "box"))


def test_validate_placement_size():
    v = validate_placement(PlacementVector([1.0, 1.0], 2))
    assert any(x.kind == "size" for x in v)


def test_require_valid_raises():
    with pytest.raises(ValueError, match="sum"):
        PlacementVector([0.5] * 4, 3).require_valid()


def test_placement_immutable_and_hashable():
    p = PlacementVector([1, 1, 0, 0], 2)
    with pytest.raises(ValueError):
        p.t[0] = 0.0
    assert p == PlacementVector(np.array([1.0, 1.0, 0.0, 0.0]), 2)
    assert len({p, PlacementVector([1, 1, 0, 0], 2)}) == 1
