import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spnperf import GuardSyntaxError, Place, PetriNet, UnknownPlaceError
from spnperf.guards import (
    RELOPS, And, Atom, Not, Or, compile_guard, eval_guard, parse_guard, places_of, to_postfix, to_text,
)
from spnperf._kernel import _eval_prog


def test_bare_atom():
    assert parse_guard("#OPF3_1>0") == Atom("OPF3_1", ">", 0)


def test_and_of_parenthesised_atoms():
    g = parse_guard("(#TO_FINISH=1)AND(#OPF3_1>0)")
    assert g == And((Atom("TO_FINISH", "=", 1), Atom("OPF3_1", ">", 0)))


def test_unknown_place_is_named():
    net = PetriNet([Place("X")], [], [])
    with pytest.raises(UnknownPlaceError) as exc:
        parse_guard("#X>1 OR NOT (#Y=0)", net)
    assert exc.value.place == "Y"
    assert "'Y'" in str(exc.value)


def test_precedence_and_binds_tighter():
    g = parse_guard("#A>0 OR #B>0 AND #C>0")
    assert isinstance(g, Or)
    assert g.items[1] == And((Atom("B", ">", 0), Atom("C", ">", 0)))


def test_keywords_case_insensitive_and_whitespace():
    assert parse_guard("  not(#A >= 2)  and #B<=3 ") == parse_guard("NOT (#A>=2) AND #B<=3")


@pytest.mark.parametrize(
    "text, pos",
    [("(#A>0", 5), ("#A>", 3), ("#>0", 1), ("#A>0 AND", 8), ("#A!0", 2), ("#A>0)", 4), ("#A>x", 3)],
)
def test_syntax_errors_report_position(text, pos):
    with pytest.raises(GuardSyntaxError) as exc:
        parse_guard(text)
    assert exc.value.position == pos
    assert f"position {pos}" in str(exc.value)


def test_empty_guard_rejected():
    with pytest.raises(GuardSyntaxError):
        parse_guard("   ")


def test_eval_examples():
    g02 = parse_guard("(#TO_FINISH=1)AND(#OPF3_1>0)")
    assert eval_guard(Atom("OPF3_1", ">", 0), {"OPF3_1": 3})
    assert not eval_guard(g02, {"TO_FINISH": 0, "OPF3_1": 5})
    assert eval_guard(Atom("P", "=", 0), {"P": 0})


def test_places_of():
    assert places_of(parse_guard("NOT (#A>0) OR (#B=1 AND #A<3)")) == {"A", "B"}


# -- property checks ----------------------------------------------------

PLACES = ["A", "B", "C", "D_1"]


def atoms():
    return st.builds(Atom, st.sampled_from(PLACES), st.sampled_from(RELOPS), st.integers(0, 5))


def trees():
    return st.recursive(
        atoms(),
        lambda kids: st.one_of(
            st.builds(lambda xs: And(tuple(xs)), st.lists(kids, min_size=2, max_size=3)),
            st.builds(lambda xs: Or(tuple(xs)), st.lists(kids, min_size=2, max_size=3)),
            st.builds(Not, kids),
        ),
        max_leaves=8,
    )


markings = st.fixed_dictionaries({p: st.integers(0, 6) for p in PLACES})


@settings(max_examples=1000, deadline=None)
@given(trees())
def test_print_parse_round_trip(g):
    assert parse_guard(to_text(g)) == g


@settings(max_examples=1000, deadline=None)
@given(trees(), markings)
def test_compiled_forms_agree_with_interpreter(g, m):
    index = {p: i for i, p in enumerate(PLACES)}
    vec = [m[p] for p in PLACES]
    expected = eval_guard(g, m)
    assert compile_guard(g, index)(vec) is expected
    prog = to_postfix(g, index)
    stack = np.zeros(len(prog) + 1, dtype=np.bool_)
    assert bool(_eval_prog(prog, 0, len(prog), np.array(vec, dtype=np.int64), stack)) is expected
