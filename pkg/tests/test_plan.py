import pytest

from kprotect.errors import NoParentsError, PlanError
from kprotect.plan import CompositionPlan, PlanNode, effective_k

RUNNING = """
# running example
node DS1 service=DS1 k=3 input=const:city=lyon
node DS2 service=DS2 k=3 input=parent
node DS3 service=DS3 k=2 input=parent
node DS4 service=DS4 k=1 input=parent
node DS5 service=DS5 k=4 input=parent
edge DS1 DS2
edge DS2 DS3
edge DS2 DS4
edge DS4 DS5
alpha=5 consent=off
"""


def test_parse_and_structure():
    plan = CompositionPlan.parse(RUNNING)
    assert plan.roots == ["DS1"]
    assert plan.leaves == ["DS3", "DS5"]
    assert plan.layers() == [["DS1"], ["DS2"], ["DS3", "DS4"], ["DS5"]]
    assert plan.nodes["DS1"].const == {"city": "lyon"}
    assert plan.params == {"alpha": "5", "consent": "off"}
    assert plan.children("DS2") == ["DS3", "DS4"]
    assert plan.ancestors("DS5") == {"DS1", "DS2", "DS4"}


def test_effective_k_is_max_over_ancestors():
    plan = CompositionPlan.parse(RUNNING)
    assert effective_k(plan, "DS2") == 3
    assert effective_k(plan, "DS3") == 3
    assert effective_k(plan, "DS5") == 3  # own k=4 does not count
    with pytest.raises(NoParentsError):
        effective_k(plan, "DS1")


def test_chain_effective_k():
    plan = CompositionPlan.parse(
        "node DS1 k=3 input=const:a=b\nnode DS2 k=2 input=parent\nnode DS3 k=1 input=parent\n"
        "edge DS1 DS2\nedge DS2 DS3\n"
    )
    assert effective_k(plan, "DS3") == 3


def test_text_round_trip():
    plan = CompositionPlan.parse(RUNNING)
    again = CompositionPlan.parse(plan.to_text())
    assert again.to_text() == plan.to_text()
    assert again.fingerprint() == plan.fingerprint()


@pytest.mark.parametrize(
    "text",
    [
        "node A input=const:x=1\nnode B input=parent\nedge A C\n",
        "node A input=const:x=1\nnode B input=parent\nnode C input=parent\nedge B C\nedge C B\nedge A B\n",
        "node A input=parent\n",
        "node A input=const:x=1\nnode B input=const:y=2\nedge A B\n",
        "node A input=const:x=1 k=0\n",
        "node A input=const:x=1 k=two\n",
        "node A input=sideways\n",
        "node A input=const:=1\n",
        "node A input=const:x=1\nnode A input=const:x=1\n",
        "edge A\n",
        "frobnicate\n",
    ],
)
def test_invalid_plans(text):
    with pytest.raises(PlanError):
        CompositionPlan.parse(text)


def test_direct_construction_and_diamond_labels():
    nodes = {n: PlanNode(n, n, 2, const={"g": "1"} if n == "A" else None) for n in "ABCD"}
    plan = CompositionPlan(nodes, [("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")])
    assert plan.parents("D") == ["B", "C"]
    assert plan.edge_label("D") == "B+C"
    assert plan.edge_label("A") == "user"
