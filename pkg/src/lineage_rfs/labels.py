"""Object labels that carry lineage.

A spontaneous birth is labelled ``Birth(time, index)``.  When an object
divides at time ``k+1`` into ``c`` daughters, each daughter is labelled
``Spawned(parent, k+1, c, q)`` for ``q = 1..c``; the parent label is
embedded, so ancestry can be recovered from a label alone.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import total_ordering
from typing import Iterable, Optional, Union

MAX_CHILDREN = 2


@total_ordering
@dataclass(frozen=True, eq=False)
class Birth:
    time: int
    index: int
    _key: tuple = field(init=False, repr=False, compare=False)
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.time < 0 or self.index < 0:
            raise ValueError(f"invalid birth label ({self.time}, {self.index})")
        key = (self.time, 0, (), self.index)
        object.__setattr__(self, "_key", key)
        object.__setattr__(self, "_hash", hash(key))

    def __eq__(self, other):
        if not isinstance(other, (Birth, Spawned)):
            return NotImplemented
        return self._key == other._key

    def __lt__(self, other):
        return self._key < other._key

    def __hash__(self):
        return self._hash

    def __str__(self):
        return f"{self.time}.{self.index}"

    def __repr__(self):
        return f"Birth({self.time},{self.index})"


@total_ordering
@dataclass(frozen=True, eq=False)
class Spawned:
    parent: "Label"
    time: int
    siblings: int
    sibling_index: int
    _key: tuple = field(init=False, repr=False, compare=False)
    _hash: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 2 <= self.siblings <= MAX_CHILDREN:
            raise ValueError(f"sibling count {self.siblings} outside 2..{MAX_CHILDREN}")
        if not 1 <= self.sibling_index <= self.siblings:
            raise ValueError(f"sibling index {self.sibling_index} outside 1..{self.siblings}")
        if self.time <= self.parent.time:
            raise ValueError("a daughter must be born after its parent's label time")
        key = (self.time, 1, self.parent._key, self.sibling_index)
        object.__setattr__(self, "_key", key)
        object.__setattr__(self, "_hash", hash(key))

    def __eq__(self, other):
        if not isinstance(other, (Birth, Spawned)):
            return NotImplemented
        return self._key == other._key

    def __lt__(self, other):
        return self._key < other._key

    def __hash__(self):
        return self._hash

    def __str__(self):
        return f"{self.parent}|{self.time}:{self.siblings}:{self.sibling_index}"

    def __repr__(self):
        return f"Spawned({self.parent!r},{self.time},{self.siblings},{self.sibling_index})"


Label = Union[Birth, Spawned]


def parent(label: Label) -> Optional[Label]:
    return label.parent if isinstance(label, Spawned) else None


def generated_label_set(label: Label, c: int, next_time: int) -> frozenset:
    """Labels produced when ``label`` generates ``c`` objects at ``next_time``."""
    if c < 0 or c > MAX_CHILDREN:
        raise ValueError(f"cannot generate {c} objects (max {MAX_CHILDREN})")
    if next_time <= label.time:
        raise ValueError("next_time must exceed the label time")
    if c == 0:
        return frozenset()
    if c == 1:
        return frozenset([label])
    return frozenset(Spawned(label, next_time, c, q) for q in range(1, c + 1))


def daughters(label: Label, next_time: int) -> tuple:
    """The two daughter labels, ordered by sibling index."""
    return (Spawned(label, next_time, 2, 1), Spawned(label, next_time, 2, 2))


def ancestry(label: Label) -> list:
    chain = [label]
    while isinstance(chain[-1], Spawned):
        chain.append(chain[-1].parent)
    chain.reverse()
    return chain


def root(label: Label) -> Birth:
    while isinstance(label, Spawned):
        label = label.parent
    return label


def format_label(label: Label) -> str:
    return str(label)


def parse_label(text: str) -> Label:
    """Inverse of ``format_label``: ``"k.i"`` or ``"<parent>|k:c:q"``."""
    parts = text.strip().split("|")
    try:
        k, i = parts[0].split(".")
        label: Label = Birth(int(k), int(i))
        for part in parts[1:]:
            t, c, q = part.split(":")
            label = Spawned(label, int(t), int(c), int(q))
    except ValueError as exc:
        raise ValueError(f"malformed label string {text!r}") from exc
    return label


@dataclass
class LineageForest:
    roots: list
    children: dict

    def nodes(self):
        out = []
        stack = list(reversed(self.roots))
        while stack:
            node = stack.pop()
            out.append(node)
            stack.extend(reversed(self.children.get(node, [])))
        return out

    def to_dict(self) -> dict:
        return {
            "roots": [str(r) for r in self.roots],
            "children": {str(k): [str(c) for c in v] for k, v in self.children.items() if v},
        }


def build_lineage_forest(labels: Iterable[Label]) -> LineageForest:
    """Arrange labels into trees; a label whose parent is absent becomes a root."""
    present = set(labels)
    roots = []
    children: dict = {lab: [] for lab in present}
    for lab in sorted(present):
        par = parent(lab)
        if par is not None and par in present:
            children[par].append(lab)
        else:
            roots.append(lab)
    for kids in children.values():
        kids.sort()
    return LineageForest(roots=roots, children=children)
