"""Class-hierarchy trees, label-set cuts and projections onto cuts.

A hierarchy document is a JSON object ``{"name": ..., "children": [...]}``
whose top-level object is the root.  Nodes are numbered in depth-first
pre-order (children in file order); leaves keep that relative order and
get the dense indices ``0..c-1`` used by every probability array in the
package.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "HierarchyError",
    "ClassTree",
    "LabelSet",
    "parse_hierarchy",
    "load_hierarchy",
    "bundled_tree",
    "serialize_hierarchy",
    "validate_cut",
    "leaf_cut",
    "check_fingerprint",
    "project_distribution",
    "project_label",
]


class HierarchyError(ValueError):
    """Raised for malformed hierarchy documents and invalid cuts."""


@dataclass(frozen=True)
class ClassTree:
    names: tuple[str, ...]
    parents: tuple[Optional[int], ...]
    leaf_order: tuple[int, ...]
    children: tuple[tuple[int, ...], ...] = field(repr=False)
    fingerprint: str = field(repr=False)

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_order)

    @property
    def root(self) -> int:
        return 0

    @property
    def leaf_names(self) -> list[str]:
        return [self.names[i] for i in self.leaf_order]

    def node_id(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise HierarchyError(f"unknown class name {name!r}") from None

    def is_leaf(self, node: int) -> bool:
        return not self.children[node]

    def leaf_index(self, node: int) -> int:
        """Dense index of a leaf node inside ``leaf_order``."""
        try:
            return self.leaf_order.index(node)
        except ValueError:
            raise HierarchyError(f"{self.names[node]!r} is not a leaf") from None

    def ancestors(self, node: int) -> list[int]:
        out = []
        parent = self.parents[node]
        while parent is not None:
            out.append(parent)
            parent = self.parents[parent]
        return out

    def subtree_leaves(self, node: int) -> frozenset[int]:
        """Leaf indices (not node ids) below ``node``, inclusive."""
        stack = [node]
        leaves = []
        while stack:
            cur = stack.pop()
            if self.children[cur]:
                stack.extend(self.children[cur])
            else:
                leaves.append(self.leaf_index(cur))
        return frozenset(leaves)

    def depth(self, node: int) -> int:
        return len(self.ancestors(node))

    def to_dict(self, node: int = 0) -> dict:
        out: dict = {"name": self.names[node]}
        if self.children[node]:
            out["children"] = [self.to_dict(ch) for ch in self.children[node]]
        return out


@dataclass(frozen=True)
class LabelSet:
    """An antichain of tree nodes used as one dataset's label vocabulary."""

    tree_fingerprint: str
    members: tuple[int, ...]
    names: tuple[str, ...]
    leaves_per_member: tuple[frozenset[int], ...]

    @property
    def m(self) -> int:
        return len(self.members)

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.tree_fingerprint.encode())
        h.update(json.dumps(list(self.names)).encode())
        return h.hexdigest()[:16]

    @property
    def is_leaf_cut(self) -> bool:
        return all(len(s) == 1 for s in self.leaves_per_member)

    def membership(self, n_leaves: int) -> np.ndarray:
        """0/1 matrix of shape (n_leaves, m); column k marks S_k."""
        mat = np.zeros((n_leaves, self.m))
        for k, leaves in enumerate(self.leaves_per_member):
            mat[sorted(leaves), k] = 1.0
        return mat

    def leaf_to_member(self, n_leaves: int) -> np.ndarray:
        """Lookup array: member index covering each leaf, or -1."""
        out = np.full(n_leaves, -1, dtype=np.int64)
        for k, leaves in enumerate(self.leaves_per_member):
            out[sorted(leaves)] = k
        return out


def _fingerprint(doc: dict) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _line_of(text: str, name: str, occurrence: int) -> Optional[int]:
    pattern = re.compile(r'"name"\s*:\s*' + re.escape(json.dumps(name)))
    matches = list(pattern.finditer(text))
    if len(matches) <= occurrence:
        return None
    return text.count("\n", 0, matches[occurrence].start()) + 1


def parse_hierarchy(document: str) -> ClassTree:
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise HierarchyError(f"malformed hierarchy document at line {exc.lineno}: {exc.msg}") from None
    if isinstance(doc, list):
        if len(doc) != 1:
            roots = [d.get("name") if isinstance(d, dict) else d for d in doc]
            raise HierarchyError(f"hierarchy must have exactly one root, found {roots}")
        doc = doc[0]

    names: list[str] = []
    parents: list[Optional[int]] = []
    children: list[list[int]] = []
    seen: dict[str, int] = {}

    def visit(node, parent):
        if not isinstance(node, dict) or "name" not in node:
            raise HierarchyError(f"malformed node under {names[parent] if parent is not None else 'top level'!r}: {node!r}")
        name = node["name"]
        if not isinstance(name, str) or not name:
            raise HierarchyError(f"node name must be a non-empty string, got {name!r}")
        extra = set(node) - {"name", "children"}
        if extra:
            raise HierarchyError(f"node {name!r} has unknown keys {sorted(extra)}")
        if name in seen:
            seen[name] += 1
            line = _line_of(document, name, seen[name] - 1)
            where = f" (line {line})" if line else ""
            raise HierarchyError(f"duplicate class name {name!r}{where}")
        seen[name] = 1
        idx = len(names)
        names.append(name)
        parents.append(parent)
        children.append([])
        if parent is not None:
            children[parent].append(idx)
        kids = node.get("children", [])
        if not isinstance(kids, list):
            raise HierarchyError(f"children of {name!r} must be an array")
        for kid in kids:
            visit(kid, idx)

    visit(doc, None)
    leaf_order = tuple(i for i in range(len(names)) if not children[i])
    tree = ClassTree(
        names=tuple(names),
        parents=tuple(parents),
        leaf_order=leaf_order,
        children=tuple(tuple(c) for c in children),
        fingerprint="",
    )
    object.__setattr__(tree, "fingerprint", _fingerprint(tree.to_dict()))
    return tree


def serialize_hierarchy(tree: ClassTree) -> str:
    return json.dumps(tree.to_dict(), indent=2) + "\n"


def load_hierarchy(path) -> ClassTree:
    with open(path, encoding="utf-8") as fh:
        return parse_hierarchy(fh.read())


def bundled_tree() -> ClassTree:
    """The illustrative nucleus tree: 4 super-classes over 11 sub-classes."""
    text = resources.files("hierseg").joinpath("data/nucleus_tree.json").read_text()
    return parse_hierarchy(text)


def validate_cut(tree: ClassTree, names: Sequence[str]) -> LabelSet:
    if isinstance(names, str):
        names = [n.strip() for n in names.split(",") if n.strip()]
    names = list(names)
    if not names:
        raise HierarchyError("a cut needs at least one class name")
    if len(set(names)) != len(names):
        raise HierarchyError(f"cut repeats a class name: {names}")
    members = [tree.node_id(n) for n in names]
    member_set = set(members)
    for node in members:
        for anc in tree.ancestors(node):
            if anc in member_set:
                raise HierarchyError(
                    f"cut is not an antichain: {tree.names[node]!r} is a descendant of {tree.names[anc]!r}"
                )
    return LabelSet(
        tree_fingerprint=tree.fingerprint,
        members=tuple(members),
        names=tuple(names),
        leaves_per_member=tuple(tree.subtree_leaves(n) for n in members),
    )


def leaf_cut(tree: ClassTree) -> LabelSet:
    return validate_cut(tree, tree.leaf_names)


def check_fingerprint(tree: ClassTree, cut: LabelSet) -> None:
    if cut.tree_fingerprint != tree.fingerprint:
        raise HierarchyError(
            f"label set was built for tree {cut.tree_fingerprint}, not {tree.fingerprint}"
        )


def project_distribution(tree: ClassTree, cut: LabelSet, leaf_probs) -> np.ndarray:
    """Sum leaf probabilities over each member's leaf set.

    Works on a single vector of length c or on any array whose last axis
    has length c; the result replaces that axis with one of length m.
    """
    check_fingerprint(tree, cut)
    probs = np.asarray(leaf_probs, dtype=float)
    if probs.shape[-1] != tree.n_leaves:
        raise HierarchyError(f"expected {tree.n_leaves} leaf probabilities, got {probs.shape[-1]}")
    out = np.empty(probs.shape[:-1] + (cut.m,))
    for k, leaves in enumerate(cut.leaves_per_member):
        out[..., k] = probs[..., sorted(leaves)].sum(axis=-1)
    return out


def project_label(tree: ClassTree, cut: LabelSet, leaf: Union[int, str]) -> Optional[int]:
    """Index of the cut member whose subtree holds ``leaf`` (a node id or name)."""
    check_fingerprint(tree, cut)
    node = tree.node_id(leaf) if isinstance(leaf, str) else int(leaf)
    if not 0 <= node < len(tree.names):
        raise HierarchyError(f"node id {node} out of range")
    if not tree.is_leaf(node):
        raise HierarchyError(f"{tree.names[node]!r} is not a leaf")
    j = tree.leaf_index(node)
    for k, leaves in enumerate(cut.leaves_per_member):
        if j in leaves:
            return k
    return None

