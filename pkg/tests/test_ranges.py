import pytest
from hypothesis import given
from hypothesis import strategies as st

from kprotect.errors import EmptyRangeError
from kprotect.ranges import IdRange

bound = st.one_of(st.none(), st.integers(0, 60))


@st.composite
def ranges(draw):
    while True:
        lo, hi = draw(bound), draw(bound)
        try:
            return IdRange(lo, hi, draw(st.booleans()), draw(st.booleans()))
        except EmptyRangeError:
            continue


def members(rng: IdRange) -> set[int]:
    return {v for v in range(-1, 62) if v in rng}


def test_constructors():
    assert 5 in IdRange.at_most(5) and 6 not in IdRange.at_most(5)
    assert 5 not in IdRange.above(5) and 6 in IdRange.above(5)
    assert members(IdRange.closed(3, 5)) == {3, 4, 5}
    assert members(IdRange.point(7)) == {7}
    assert IdRange.full().first is None and IdRange.full().last is None


def test_empty_rejected():
    with pytest.raises(EmptyRangeError):
        IdRange(5, 5, False, True)
    with pytest.raises(EmptyRangeError):
        IdRange(5, 6, False, False)
    with pytest.raises(ValueError):
        IdRange(9, 2)


def test_normalized_comparisons():
    # (4, 7] and [5, 7] hold the same integers
    assert IdRange(4, 7).issubset(IdRange.closed(5, 7))
    assert IdRange.closed(5, 7).issubset(IdRange(4, 7))
    assert IdRange.at_most(3).intersection(IdRange.above(3)) is None


def test_str():
    assert str(IdRange(None, 5)) == "(-inf, 5]"
    assert str(IdRange.closed(1, 2)) == "[1, 2]"


@given(ranges(), ranges())
def test_set_semantics(a, b):
    inter = a.intersection(b)
    if inter is None:
        assert not (members(a) & members(b))
        assert not a.overlaps(b)
    else:
        assert members(inter) == members(a) & members(b)
        assert inter.issubset(a) and inter.issubset(b)
    assert a.issubset(b) == (members(a) <= members(b))
    assert members(a) | members(b) <= members(a.hull(b))
