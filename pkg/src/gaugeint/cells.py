"""Half-open interval cells, product/cylinder domains, points, and tagging.

The basic geometric objects: one-dimensional cells ]lo, hi] (possibly
unbounded), finite products of them (boxes), cylinder sets of infinite
products restricted on finitely many axes, and points with finite explicit
support plus a constant tail value for all unlisted axes.

Everything here is an immutable value; operations are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Union

NEG_INF = float("-inf")
POS_INF = float("inf")

AxisLabel = str
# Hierarchical axes use "/"-joined atoms, e.g. "t1/2" = spatial component 2
# at time label t1 of a cylinder-of-products domain.
AXIS_SEP = "/"


class DomainMismatchError(ValueError):
    """A point/cell pair was built against different domains."""


class InvalidSplitError(ValueError):
    """Split point not interior to the edge being split."""


def _check_real(x: float) -> float:
    x = float(x)
    if math.isnan(x):
        raise ValueError("NaN is not an extended real")
    return x


def real_to_json(x: float):
    if x == POS_INF:
        return "+inf"
    if x == NEG_INF:
        return "-inf"
    return x


def real_from_json(v) -> float:
    if v == "+inf" or v == "inf":
        return POS_INF
    if v == "-inf":
        return NEG_INF
    return _check_real(v)


@dataclass(frozen=True)
class Cell1D:
    """Half-open interval ]lo, hi] with lo < hi; either end may be infinite.

    hi = +inf denotes the open-ended form ]lo, +inf[.
    """

    lo: float
    hi: float

    def __post_init__(self):
        object.__setattr__(self, "lo", _check_real(self.lo))
        object.__setattr__(self, "hi", _check_real(self.hi))
        if not self.lo < self.hi:
            raise ValueError(f"degenerate cell: lo={self.lo} >= hi={self.hi}")

    @property
    def length(self) -> float:
        if math.isinf(self.lo) or math.isinf(self.hi):
            return POS_INF
        return self.hi - self.lo

    @property
    def bounded(self) -> bool:
        return not (math.isinf(self.lo) or math.isinf(self.hi))

    def contains(self, x: float) -> bool:
        return self.lo < x <= self.hi or (x == POS_INF and self.hi == POS_INF)

    @property
    def vertices(self) -> tuple[float, float]:
        # +/-inf count as vertices of unbounded edges.
        return (self.lo, self.hi)

    def is_vertex(self, x: float) -> bool:
        return x == self.lo or x == self.hi

    def split(self, at: float) -> tuple["Cell1D", "Cell1D"]:
        if not (self.lo < at < self.hi) or math.isinf(at):
            raise InvalidSplitError(
                f"split point {at} not interior to ]{self.lo}, {self.hi}]"
            )
        return Cell1D(self.lo, at), Cell1D(at, self.hi)

    def overlaps(self, other: "Cell1D") -> bool:
        return self.lo < other.hi and other.lo < self.hi

    def to_json(self):
        return {"lo": real_to_json(self.lo), "hi": real_to_json(self.hi)}

    @classmethod
    def from_json(cls, d) -> "Cell1D":
        return cls(real_from_json(d["lo"]), real_from_json(d["hi"]))


FULL_LINE = Cell1D(NEG_INF, POS_INF)


# ---------------------------------------------------------------------------
# Domain descriptors: a tree of factors.  Leaves carry the base interval of
# one axis; product nodes are finite products of named subtrees; cylinder
# nodes repeat one subtree over a (possibly countably infinite) label set.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LeafSpec:
    base: Cell1D = FULL_LINE

    def to_json(self):
        return {"kind": "leaf", "base": self.base.to_json()}


@dataclass(frozen=True)
class ProductSpec:
    children: tuple[tuple[str, "DomainNode"], ...]

    def __post_init__(self):
        names = [n for n, _ in self.children]
        if len(set(names)) != len(names):
            raise ValueError("duplicate factor names in product")

    def child(self, name: str) -> "DomainNode":
        for n, c in self.children:
            if n == name:
                return c
        raise KeyError(name)

    def to_json(self):
        return {
            "kind": "product",
            "children": {n: c.to_json() for n, c in self.children},
        }


@dataclass(frozen=True)
class CylinderSpec:
    """One subtree repeated over a label set; labels=None means countable."""

    child: "DomainNode"
    labels: Optional[tuple[str, ...]] = None

    @property
    def unbounded(self) -> bool:
        return self.labels is None

    def has_label(self, atom: str) -> bool:
        return self.unbounded or atom in self.labels

    def to_json(self):
        return {
            "kind": "cylinder",
            "labels": None if self.labels is None else list(self.labels),
            "child": self.child.to_json(),
        }


DomainNode = Union[LeafSpec, ProductSpec, CylinderSpec]


def domain_from_json(d) -> DomainNode:
    kind = d["kind"]
    if kind == "leaf":
        return LeafSpec(Cell1D.from_json(d["base"]))
    if kind == "product":
        return ProductSpec(
            tuple((n, domain_from_json(c)) for n, c in d["children"].items())
        )
    if kind == "cylinder":
        labels = d.get("labels")
        return CylinderSpec(
            domain_from_json(d["child"]),
            None if labels is None else tuple(labels),
        )
    raise ValueError(f"unknown domain node kind {kind!r}")


@dataclass(frozen=True)
class DomainSpec:
    """A structured product domain: the tree of factors plus axis helpers."""

    root: DomainNode

    def resolve(self, axis: AxisLabel) -> Cell1D:
        """Base interval of the leaf reached by the axis path."""
        node = self.root
        atoms = axis.split(AXIS_SEP) if axis else []
        for atom in atoms:
            if isinstance(node, ProductSpec):
                node = node.child(atom)
            elif isinstance(node, CylinderSpec):
                if not node.has_label(atom):
                    raise KeyError(f"label {atom!r} not in cylinder label set")
                node = node.child
            else:
                raise KeyError(f"axis path {axis!r} descends past a leaf")
        if not isinstance(node, LeafSpec):
            raise KeyError(f"axis path {axis!r} does not reach a leaf")
        return node.base

    def has_axis(self, axis: AxisLabel) -> bool:
        try:
            self.resolve(axis)
            return True
        except KeyError:
            return False

    @property
    def finite_dimensional(self) -> bool:
        return _finite(self.root)

    def axes(self) -> tuple[AxisLabel, ...]:
        """Flattened axis set; only defined for finite-dimensional domains."""
        if not self.finite_dimensional:
            raise ValueError("axes() undefined for infinite-dimensional domain")
        out: list[AxisLabel] = []
        _collect_axes(self.root, "", out)
        return tuple(out)

    def subtree_axes(self, prefix: str) -> tuple[AxisLabel, ...]:
        """Axes of the finite subtree under a path prefix ('' = root)."""
        node = self.root
        for atom in prefix.split(AXIS_SEP) if prefix else []:
            if isinstance(node, ProductSpec):
                node = node.child(atom)
            elif isinstance(node, CylinderSpec):
                node = node.child
            else:
                raise KeyError(prefix)
        out: list[AxisLabel] = []
        _collect_axes(node, prefix, out)
        return tuple(out)

    def to_json(self):
        return self.root.to_json()

    @classmethod
    def from_json(cls, d) -> "DomainSpec":
        return cls(domain_from_json(d))


def _finite(node: DomainNode) -> bool:
    if isinstance(node, LeafSpec):
        return True
    if isinstance(node, ProductSpec):
        return all(_finite(c) for _, c in node.children)
    return node.labels is not None and _finite(node.child)


def _collect_axes(node: DomainNode, prefix: str, out: list[AxisLabel]) -> None:
    if isinstance(node, LeafSpec):
        out.append(prefix)
        return
    if isinstance(node, ProductSpec):
        pairs = node.children
    else:
        if node.labels is None:
            raise ValueError("cannot flatten an unbounded cylinder")
        pairs = tuple((l, node.child) for l in node.labels)
    for name, child in pairs:
        path = f"{prefix}{AXIS_SEP}{name}" if prefix else name
        _collect_axes(child, path, out)


# Common constructors.


def line_domain(axis: str = "x", base: Cell1D = FULL_LINE) -> DomainSpec:
    if axis:
        return DomainSpec(ProductSpec(((axis, LeafSpec(base)),)))
    return DomainSpec(LeafSpec(base))


def box_domain(bases: Mapping[str, Cell1D]) -> DomainSpec:
    return DomainSpec(
        ProductSpec(tuple((n, LeafSpec(b)) for n, b in bases.items()))
    )


def sequence_domain(base: Cell1D = FULL_LINE) -> DomainSpec:
    """R^T for countable T: unbounded cylinder over one leaf."""
    return DomainSpec(CylinderSpec(LeafSpec(base)))


def product_sequence_domain(d: int, base: Cell1D = FULL_LINE) -> DomainSpec:
    """(R^d)^T: unbounded cylinder whose factor is a d-fold product."""
    factor = ProductSpec(
        tuple((str(i), LeafSpec(base)) for i in range(1, d + 1))
    )
    return DomainSpec(CylinderSpec(factor))


# ---------------------------------------------------------------------------
# Points
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PointT:
    """A point of a product domain: finite support map plus tail constant.

    Coordinates not listed in the support take the tail value. +/-inf are
    legal coordinates (tag points of unbounded cells).
    """

    support: Mapping[AxisLabel, float]
    tail: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self,
            "support",
            {a: _check_real(v) for a, v in self.support.items()},
        )
        object.__setattr__(self, "tail", _check_real(self.tail))

    def value(self, axis: AxisLabel) -> float:
        return self.support.get(axis, self.tail)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointT):
            return NotImplemented
        keys = set(self.support) | set(other.support)
        return self.tail == other.tail and all(
            self.value(a) == other.value(a) for a in keys
        )

    def __hash__(self):
        essential = tuple(
            sorted((a, v) for a, v in self.support.items() if v != self.tail)
        )
        return hash((essential, self.tail))

    def restrict(self, prefix: str) -> "PointT":
        """Sub-point under a path prefix, axis names relative to it."""
        if not prefix:
            return self
        cut = len(prefix) + len(AXIS_SEP)
        sub = {
            a[cut:]: v
            for a, v in self.support.items()
            if a.startswith(prefix + AXIS_SEP)
        }
        return PointT(sub, self.tail)

    def with_coords(self, extra: Mapping[AxisLabel, float]) -> "PointT":
        merged = dict(self.support)
        merged.update(extra)
        return PointT(merged, self.tail)

    def to_json(self):
        return {
            "support": {a: real_to_json(v) for a, v in self.support.items()},
            "tail": real_to_json(self.tail),
        }

    @classmethod
    def from_json(cls, d) -> "PointT":
        return cls(
            {a: real_from_json(v) for a, v in d["support"].items()},
            real_from_json(d.get("tail", 0.0)),
        )


# ---------------------------------------------------------------------------
# Multi-dimensional cells
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoxCell:
    """Finite product of one-dimensional cells, one edge per axis."""

    edges: Mapping[AxisLabel, Cell1D]

    def __post_init__(self):
        object.__setattr__(self, "edges", dict(self.edges))
        if not self.edges:
            raise ValueError("box cell needs at least one edge")

    @property
    def restricted_axes(self) -> tuple[AxisLabel, ...]:
        return tuple(sorted(self.edges))

    def edge(self, axis: AxisLabel) -> Cell1D:
        return self.edges[axis]

    def contains(self, x: PointT) -> bool:
        return all(c.contains(x.value(a)) for a, c in self.edges.items())

    def overlaps(self, other: "BoxCell | CylinderCell") -> bool:
        return _cells_overlap(self, other)

    def split(self, axis: AxisLabel, at: float) -> tuple["BoxCell", "BoxCell"]:
        left, right = self.edges[axis].split(at)
        e1 = dict(self.edges)
        e2 = dict(self.edges)
        e1[axis] = left
        e2[axis] = right
        return BoxCell(e1), BoxCell(e2)

    def __eq__(self, other):
        if not isinstance(other, BoxCell):
            return NotImplemented
        return self.edges == other.edges

    def __hash__(self):
        return hash(tuple(sorted(self.edges.items())))

    def to_json(self):
        return {
            "kind": "box",
            "edges": {a: c.to_json() for a, c in self.edges.items()},
        }


@dataclass(frozen=True, eq=False)
class CylinderCell:
    """Subset of an infinite product restricted on a finite axis set.

    Unrestricted axes implicitly carry the full base interval of the domain,
    so membership only examines the restricted coordinates.
    """

    restricted: Mapping[AxisLabel, Cell1D]
    domain: DomainSpec

    def __post_init__(self):
        object.__setattr__(self, "restricted", dict(self.restricted))
        if not self.restricted:
            raise ValueError("cylinder cell needs a non-empty restricted set")
        for a in self.restricted:
            if not self.domain.has_axis(a):
                raise DomainMismatchError(f"axis {a!r} not in domain")

    @property
    def edges(self) -> Mapping[AxisLabel, Cell1D]:
        return self.restricted

    @property
    def restricted_axes(self) -> tuple[AxisLabel, ...]:
        return tuple(sorted(self.restricted))

    def edge(self, axis: AxisLabel) -> Cell1D:
        return self.restricted[axis]

    def contains(self, x: PointT) -> bool:
        return all(c.contains(x.value(a)) for a, c in self.restricted.items())

    def overlaps(self, other: "BoxCell | CylinderCell") -> bool:
        return _cells_overlap(self, other)

    def split(
        self, axis: AxisLabel, at: float
    ) -> tuple["CylinderCell", "CylinderCell"]:
        left, right = self.restricted[axis].split(at)
        e1 = dict(self.restricted)
        e2 = dict(self.restricted)
        e1[axis] = left
        e2[axis] = right
        return CylinderCell(e1, self.domain), CylinderCell(e2, self.domain)

    def __eq__(self, other):
        if not isinstance(other, CylinderCell):
            return NotImplemented
        return self.restricted == other.restricted

    def __hash__(self):
        return hash(tuple(sorted(self.restricted.items())))

    def to_json(self):
        return {
            "kind": "cylinder",
            "restricted": {a: c.to_json() for a, c in self.restricted.items()},
        }


Cell = Union[BoxCell, CylinderCell]


def cell_from_json(d, domain: Optional[DomainSpec] = None) -> Cell:
    kind = d["kind"]
    if kind == "box":
        return BoxCell({a: Cell1D.from_json(c) for a, c in d["edges"].items()})
    if kind == "cylinder":
        if domain is None:
            raise ValueError("cylinder cell JSON needs the owning domain")
        return CylinderCell(
            {a: Cell1D.from_json(c) for a, c in d["restricted"].items()},
            domain,
        )
    raise ValueError(f"unknown cell kind {kind!r}")


def _cells_overlap(a: Cell, b: Cell) -> bool:
    # Cells intersect iff every axis restricted by both has overlapping
    # intervals; an axis restricted by only one side is free on the other.
    shared = set(a.edges) & set(b.edges)
    return all(a.edge(ax).overlaps(b.edge(ax)) for ax in shared)


# ---------------------------------------------------------------------------
# Tagged cells and the two membership-style predicates
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TaggedCell:
    """A cell together with its tag point; valid only when associated."""

    tag: PointT
    cell: Cell

    def __eq__(self, other):
        if not isinstance(other, TaggedCell):
            return NotImplemented
        return self.tag == other.tag and self.cell == other.cell

    def __hash__(self):
        return hash((self.tag, self.cell))

    def to_json(self):
        return {"tag": self.tag.to_json(), "cell": self.cell.to_json()}

    @classmethod
    def from_json(cls, d, domain: Optional[DomainSpec] = None) -> "TaggedCell":
        return cls(
            PointT.from_json(d["tag"]), cell_from_json(d["cell"], domain)
        )


def associated(tag: PointT, cell: Cell, domain: Optional[DomainSpec] = None) -> bool:
    """True iff the tag coordinate is a vertex of every restricted edge."""
    if domain is not None:
        for a in cell.edges:
            if not domain.has_axis(a):
                raise DomainMismatchError(f"axis {a!r} not in domain")
    return all(c.is_vertex(tag.value(a)) for a, c in cell.edges.items())


def cell_membership(x: PointT, cell: Cell) -> bool:
    """True iff every restricted coordinate of x lies in its edge."""
    return cell.contains(x)


def split_cell(cell: Cell, axis: AxisLabel, at: float) -> tuple[Cell, Cell]:
    """Split one edge at an interior point; other edges unchanged."""
    if axis not in cell.edges:
        raise KeyError(f"axis {axis!r} not restricted by this cell")
    return cell.split(axis, at)
