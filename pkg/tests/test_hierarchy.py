import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hierseg.hierarchy import (
    HierarchyError,
    leaf_cut,
    parse_hierarchy,
    project_distribution,
    project_label,
    serialize_hierarchy,
    validate_cut,
)


def names_of(tree, cut, k):
    return {tree.leaf_names[j] for j in cut.leaves_per_member[k]}


def test_small_tree_structure(small_tree):
    assert small_tree.leaf_names == ["a", "b", "c"]
    assert small_tree.n_leaves == 3
    assert small_tree.names[small_tree.root] == "root"


def test_bundled_tree_has_eleven_leaves_under_four_groups(nucleus):
    assert nucleus.n_leaves == 11
    assert len(nucleus.children[nucleus.root]) == 4


def test_duplicate_name_reports_line():
    doc = '{"name": "r", "children": [\n  {"name": "A"},\n  {"name": "A"}\n]}'
    with pytest.raises(HierarchyError, match=r"'A'.*line 3"):
        parse_hierarchy(doc)


def test_multiple_roots_rejected():
    with pytest.raises(HierarchyError, match="exactly one root"):
        parse_hierarchy('[{"name": "r1"}, {"name": "r2"}]')


@pytest.mark.parametrize("doc", ['{"name": "r", "children": [', '{"children": []}', '{"name": "r", "kids": []}'])
def test_malformed_documents(doc):
    with pytest.raises(HierarchyError):
        parse_hierarchy(doc)


def test_malformed_reports_line():
    with pytest.raises(HierarchyError, match="line 2"):
        parse_hierarchy('{"name": "r",\n "children": [}')


def test_leaf_order_is_depth_first_in_file_order():
    tree = parse_hierarchy('{"name": "r", "children": [{"name": "x"}, {"name": "Y", "children": [{"name": "y2"}, {"name": "y1"}]}, {"name": "z"}]}')
    assert tree.leaf_names == ["x", "y2", "y1", "z"]


def test_deeper_trees_are_supported():
    tree = parse_hierarchy('{"name": "r", "children": [{"name": "A", "children": [{"name": "B", "children": [{"name": "b1"}, {"name": "b2"}]}, {"name": "a1"}]}]}')
    cut = validate_cut(tree, ["A"])
    assert names_of(tree, cut, 0) == {"b1", "b2", "a1"}
    assert tree.depth(tree.node_id("b1")) == 3


def test_cut_examples(small_tree):
    cut = validate_cut(small_tree, ["K", "c"])
    assert cut.m == 2
    assert names_of(small_tree, cut, 0) == {"a", "b"}
    assert names_of(small_tree, cut, 1) == {"c"}
    leaves = validate_cut(small_tree, ["a", "c"])
    assert names_of(small_tree, leaves, 0) == {"a"} and names_of(small_tree, leaves, 1) == {"c"}
    assert leaves.is_leaf_cut and not cut.is_leaf_cut


def test_ancestor_pair_rejected_naming_both(small_tree):
    with pytest.raises(HierarchyError, match="'a' is a descendant of 'K'"):
        validate_cut(small_tree, ["K", "a"])


@pytest.mark.parametrize("names", [[], ["nope"], ["a", "a"]])
def test_bad_cuts(small_tree, names):
    with pytest.raises(HierarchyError):
        validate_cut(small_tree, names)


def test_cut_from_comma_string(nucleus):
    assert validate_cut(nucleus, "epithelial, dead").names == ("epithelial", "dead")


def test_projection_examples(small_tree):
    cut = validate_cut(small_tree, ["K", "c"])
    np.testing.assert_allclose(project_distribution(small_tree, cut, [0.3, 0.2, 0.4]), [0.5, 0.4])
    assert project_distribution(small_tree, cut, [0, 0, 0]).tolist() == [0.0, 0.0]
    p = np.array([0.1, 0.2, 0.7])
    assert project_distribution(small_tree, leaf_cut(small_tree), p).tolist() == p.tolist()


def test_projection_rejects_foreign_cut(small_tree, nucleus):
    cut = validate_cut(nucleus, ["dead"])
    with pytest.raises(HierarchyError, match="tree"):
        project_distribution(small_tree, cut, [0.3, 0.3, 0.4])


def test_project_label_examples(small_tree):
    kc = validate_cut(small_tree, ["K", "c"])
    assert project_label(small_tree, kc, "a") == 0
    assert project_label(small_tree, validate_cut(small_tree, ["K"]), "c") is None
    assert project_label(small_tree, validate_cut(small_tree, ["a", "c"]), "a") == 0
    with pytest.raises(HierarchyError, match="not a leaf"):
        project_label(small_tree, kc, "K")


def random_cut_names(tree, draw):
    names = []
    def visit(node):
        choice = draw(st.sampled_from(["take", "split", "drop"]))
        if tree.is_leaf(node):
            if choice != "drop":
                names.append(tree.names[node])
        elif choice == "take":
            names.append(tree.names[node])
        elif choice == "split":
            for kid in tree.children[node]:
                visit(kid)
    for kid in tree.children[tree.root]:
        visit(kid)
    return names


@st.composite
def cuts(draw, tree):
    names = random_cut_names(tree, draw)
    if not names:
        names = [tree.leaf_names[0]]
    return validate_cut(tree, names)


@settings(max_examples=80, deadline=None)
@given(data=st.data())
def test_member_leaf_sets_are_disjoint_and_exact(nucleus, data):
    cut = data.draw(cuts(nucleus))
    seen = set()
    for node, leaves in zip(cut.members, cut.leaves_per_member):
        assert not seen & leaves
        seen |= leaves
        assert leaves == nucleus.subtree_leaves(node)


@settings(max_examples=80, deadline=None)
@given(data=st.data())
def test_projection_is_linear_and_labels_agree(nucleus, data):
    cut = data.draw(cuts(nucleus))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    p, q = rng.random(11), rng.random(11)
    np.testing.assert_allclose(project_distribution(nucleus, cut, p + q),
                               project_distribution(nucleus, cut, p) + project_distribution(nucleus, cut, q),
                               rtol=0, atol=1e-14)
    assert project_distribution(nucleus, cut, p).sum() <= p.sum() + 1e-12
    for j, name in enumerate(nucleus.leaf_names):
        k = project_label(nucleus, cut, name)
        if k is not None:
            assert j in cut.leaves_per_member[k]
        else:
            assert all(j not in s for s in cut.leaves_per_member)


def test_leaf_cut_projection_is_identity(nucleus):
    cut = leaf_cut(nucleus)
    for j, name in enumerate(nucleus.leaf_names):
        assert project_label(nucleus, cut, name) == j


def test_roundtrip_keeps_fingerprint(nucleus, small_tree):
    for tree in (nucleus, small_tree):
        again = parse_hierarchy(serialize_hierarchy(tree))
        assert again.fingerprint == tree.fingerprint
        assert again == tree


def test_fingerprint_depends_on_structure(small_tree):
    moved = parse_hierarchy('{"name": "root", "children": [{"name": "K", "children": [{"name": "a"}]}, {"name": "b"}, {"name": "c"}]}')
    assert moved.fingerprint != small_tree.fingerprint
