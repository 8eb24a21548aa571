import pytest
from hypothesis import given, strategies as st

from psrlab.errors import EnumerationCapExceeded, StructuralError
from psrlab.spaces import (
    Future,
    History,
    ObsActSpace,
    enumerate_futures,
    enumerate_histories,
    future_from_lex,
    history_from_lex,
    splice,
)


def test_space_rejects_nonpositive_sizes():
    with pytest.raises(StructuralError):
        ObsActSpace(0, 2, 2)
    with pytest.raises(StructuralError):
        ObsActSpace(2, 2, 0)


def test_space_rejects_oversized_tree(monkeypatch):
    monkeypatch.setenv("PSRLAB_ENUM_CAP", "100")
    with pytest.raises(EnumerationCapExceeded):
        ObsActSpace(4, 4, 4)
    ObsActSpace(2, 2, 3)  # 64 <= 100


def test_cap_env_var_must_be_integer(monkeypatch):
    monkeypatch.setenv("PSRLAB_ENUM_CAP", "banana")
    with pytest.raises(StructuralError):
        ObsActSpace(2, 2, 2)


@given(st.integers(0, 3), st.data())
def test_history_lex_round_trip(h, data):
    space = ObsActSpace(3, 2, 4)
    idx = data.draw(st.integers(0, space.n_histories(h) - 1))
    hist = history_from_lex(space, h, idx)
    assert len(hist) == h
    assert hist.lex_index(space) == idx


def test_enumeration_is_lexicographic():
    space = ObsActSpace(2, 2, 2)
    hists = enumerate_histories(space, 2)
    assert hists[0].steps == ((0, 0), (0, 0))
    assert hists[1].steps == ((0, 0), (0, 1))
    assert hists[-1].steps == ((1, 1), (1, 1))
    assert len(hists) == 16


def test_history_validation_bounds():
    space = ObsActSpace(2, 2, 2)
    with pytest.raises(StructuralError):
        History(((2, 0),)).validate(space)
    with pytest.raises(StructuralError):
        History(((0, 0),) * 3).validate(space)
    History(((1, 1), (0, 0))).validate(space)


def test_prefix_and_extend():
    hist = History(((0, 1), (1, 0)))
    assert hist.prefix(1).steps == ((0, 1),)
    assert hist.extend(1, 1).steps == ((0, 1), (1, 0), (1, 1))
    assert hist.obs == (0, 1)
    assert hist.actions == (1, 0)


def test_future_action_count_rule():
    Future(0, (1, 0), (1,))  # short test: one fewer action
    Future(0, (1, 0), (1, 0))  # full pairing
    with pytest.raises(StructuralError):
        Future(0, (1, 0), ())


def test_future_validate_and_splice():
    space = ObsActSpace(2, 2, 3)
    fut = future_from_lex(space, 1, 5)
    fut.validate(space)
    assert len(fut) == 2
    hist = History(((0, 0),))
    spliced = splice(hist, fut)
    assert len(spliced) == 3
    with pytest.raises(StructuralError):
        splice(History(), fut)


def test_enumerate_futures_count():
    space = ObsActSpace(2, 2, 2)
    futs = enumerate_futures(space, 1)
    assert len(futs) == 4
    assert all(f.is_full for f in futs)
    assert futs[0].obs == (0,) and futs[0].acts == (0,)
