"""Construction and validation of gauge-fine divisions.

A division is a finite set of associated tagged cells that partition a
domain. Constructions:

* ``cousin_1d``      - successive bisection of one axis (midpoints on bounded
                       cells, integer-marching binary tails on unbounded ones)
                       with vertex-tag trials at every stage.
* ``cousin_box``     - finite-dimensional domains. Componentwise gauges
                       decompose per axis into a tensor product of 1D
                       divisions; scalar gauges use simultaneous bisection of
                       all axes with corner-tag search.
* ``slice_division`` - dimension-at-a-time: divide the first axis into fine
                       slices, then recurse on the remaining axes inside each
                       slice.
* ``cousin_cylinder``- infinite products: build a finite-dimensional fine
                       division on the axes of the gauge's L_bound and lift
                       each cell cylindrically.

Divisions can be huge (a componentwise-fine division of a square at delta
~1e-6 has ~1e12 cells), so tensor-structured divisions are stored as
per-axis arrays and only materialized on demand.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from .cells import (
    AXIS_SEP,
    AxisLabel,
    BoxCell,
    Cell,
    Cell1D,
    CylinderCell,
    CylinderSpec,
    DomainSpec,
    LeafSpec,
    PointT,
    ProductSpec,
    TaggedCell,
    associated,
    cell_from_json,
    line_domain,
)
from .gauges import (
    CompoundGauge,
    CylinderGauge,
    Gauge,
    Gauge1D,
    GaugeA,
    GaugeB,
    GaugeCylinder,
    GaugeLeaf,
    GaugeProduct,
    GaugeNode,
    _fine_edge_scalar,
    fine_1d,
    is_fine,
)

DEFAULT_DEPTH_LIMIT = 64
MATERIALIZE_CAP = 200_000
ITEM_CHECK_CAP = 20_000


class DepthLimitError(RuntimeError):
    """Bisection exceeded the depth limit; carries the nested cell chain."""

    def __init__(self, message: str, chain: Sequence[Cell1D] = ()):
        super().__init__(message)
        self.chain = list(chain)


class ConstructionUnsupportedError(ValueError):
    """The gauge lacks the structure needed for constructive division."""


class DivisionConstructionError(RuntimeError):
    """Construction failed after bounded retries; carries diagnostics."""


class TooManyCellsError(RuntimeError):
    """The requested division would exceed the materialization budget."""


# ---------------------------------------------------------------------------
# Division representations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Axis1DDivision:
    """Sorted partition of one axis: parallel arrays of lo, hi, tag."""

    axis: AxisLabel
    base: Cell1D
    lo: np.ndarray
    hi: np.ndarray
    tag: np.ndarray

    @property
    def size(self) -> int:
        return len(self.lo)

    def cells1d(self) -> Iterator[tuple[float, float, float]]:
        for i in range(self.size):
            yield float(self.lo[i]), float(self.hi[i]), float(self.tag[i])

    def locate(self, x: float) -> int:
        """Index of the cell containing x, or -1."""
        i = int(np.searchsorted(self.lo, x)) - 1
        if 0 <= i < self.size and self.lo[i] < x <= self.hi[i]:
            return i
        return -1


class Division:
    """Common interface: a finite family of associated tagged cells."""

    domain: DomainSpec

    @property
    def size(self) -> int:
        raise NotImplementedError

    def items(self) -> Iterator[TaggedCell]:
        raise NotImplementedError

    def materialize(self, cap: int = MATERIALIZE_CAP) -> list[TaggedCell]:
        if self.size > cap:
            raise TooManyCellsError(
                f"division has {self.size} cells; cap is {cap}"
            )
        return list(self.items())

    def to_json(self, cap: int = MATERIALIZE_CAP):
        return {
            "domain": self.domain.to_json(),
            "items": [t.to_json() for t in self.materialize(cap)],
        }


@dataclass
class ListDivision(Division):
    domain: DomainSpec
    cells: list[TaggedCell]

    @property
    def size(self) -> int:
        return len(self.cells)

    def items(self) -> Iterator[TaggedCell]:
        return iter(self.cells)

    @classmethod
    def from_json(cls, d) -> "ListDivision":
        domain = DomainSpec.from_json(d["domain"])
        items = [TaggedCell.from_json(t, domain) for t in d["items"]]
        return cls(domain, items)


@dataclass
class AxisDivision(Division):
    """One-axis division wrapped as single-edge box cells."""

    domain: DomainSpec
    axis1d: Axis1DDivision

    @property
    def size(self) -> int:
        return self.axis1d.size

    def items(self) -> Iterator[TaggedCell]:
        a = self.axis1d.axis
        for lo, hi, tag in self.axis1d.cells1d():
            yield TaggedCell(PointT({a: tag}), BoxCell({a: Cell1D(lo, hi)}))


@dataclass
class TensorDivision(Division):
    """Product of per-axis 1D divisions; cells enumerated lazily.

    With ``cylinder=True`` the items are cylinder cells restricted exactly on
    the factor axes, tags extended by the tail convention.
    """

    domain: DomainSpec
    factors: dict[AxisLabel, Axis1DDivision]
    cylinder: bool = False
    tail: float = 0.0

    @property
    def size(self) -> int:
        n = 1
        for f in self.factors.values():
            n *= f.size
        return n

    @property
    def axes(self) -> tuple[AxisLabel, ...]:
        return tuple(self.factors)

    def items(self) -> Iterator[TaggedCell]:
        axes = self.axes
        ranges = [range(self.factors[a].size) for a in axes]
        for idx in itertools.product(*ranges):
            yield self.item_at(idx)

    def item_at(self, idx: Sequence[int]) -> TaggedCell:
        edges = {}
        coords = {}
        for a, i in zip(self.axes, idx):
            f = self.factors[a]
            edges[a] = Cell1D(float(f.lo[i]), float(f.hi[i]))
            coords[a] = float(f.tag[i])
        if self.cylinder:
            cell: Cell = CylinderCell(edges, self.domain)
            return TaggedCell(PointT(coords, self.tail), cell)
        return TaggedCell(PointT(coords, self.tail), BoxCell(edges))


# ---------------------------------------------------------------------------
# One-dimensional construction
# ---------------------------------------------------------------------------


def _split_point(lo: float, hi: float) -> float:
    """Interior split point: midpoint when bounded, integer march into tails."""
    if math.isinf(lo) and math.isinf(hi):
        return 0.0
    if math.isinf(lo):
        return min(math.floor(hi), 0.0) - 1.0
    if math.isinf(hi):
        return max(math.ceil(lo), 0.0) + 1.0
    return 0.5 * (lo + hi)


def cousin_1d(
    g: Gauge1D,
    base: Cell1D,
    axis: AxisLabel = "x",
    depth_limit: int = DEFAULT_DEPTH_LIMIT,
    max_cells: int = 1 << 23,
) -> "AxisDivision":
    """A g-fine division of a one-dimensional cell by successive bisection.

    Each work cell first tries its two vertices as tags (lower first); if
    neither admits fineness the cell is split and both halves are pushed.
    Guaranteed to terminate for positive gauges; a pathological gauge is
    reported through the depth limit with the nested cell chain.
    """
    return AxisDivision(
        line_domain(axis, base),
        _divide_axis(g, base, axis, depth_limit, max_cells),
    )


def _divide_axis(
    g: Gauge1D,
    base: Cell1D,
    axis: AxisLabel = "x",
    depth_limit: int = DEFAULT_DEPTH_LIMIT,
    max_cells: int = 1 << 23,
) -> Axis1DDivision:
    if g.const_delta is not None and base.bounded:
        # Uniform dyadic fast path: with a constant delta every cell at the
        # first sufficient depth is admitted at its lower vertex.
        delta = g.const_delta
        if not delta > 0:
            raise ValueError("gauge not positive")
        k = 0
        length = base.length
        while length >= delta:
            k += 1
            length = base.length / (1 << k)
            if k > depth_limit:
                raise DepthLimitError(
                    f"depth limit {depth_limit} exceeded on {base}", [base]
                )
        while True:
            n = 1 << k
            if n > max_cells:
                raise TooManyCellsError(f"{n} cells exceed the cap {max_cells}")
            bounds = np.linspace(base.lo, base.hi, n + 1)
            bounds[0], bounds[-1] = base.lo, base.hi
            # Rounding can nudge a width up to the bound; verify strictly.
            if float(np.max(bounds[1:] - bounds[:-1])) < delta:
                break
            k += 1
        return Axis1DDivision(
            axis=axis, base=base, lo=bounds[:-1], hi=bounds[1:],
            tag=bounds[:-1].copy(),
        )

    los: list[float] = []
    his: list[float] = []
    tags: list[float] = []
    # Work items carry an index into the split log for error diagnostics.
    log: list[tuple[float, float, int]] = [(base.lo, base.hi, -1)]
    stack: list[tuple[float, float, int, int]] = [(base.lo, base.hi, 0, 0)]
    while stack:
        lo, hi, depth, log_idx = stack.pop()
        cell = Cell1D(lo, hi)
        if fine_1d(g, lo, cell):
            los.append(lo)
            his.append(hi)
            tags.append(lo)
            continue
        if fine_1d(g, hi, cell):
            los.append(lo)
            his.append(hi)
            tags.append(hi)
            continue
        if depth >= depth_limit:
            chain = _chain_from_log(log, log_idx)
            raise DepthLimitError(
                f"depth limit {depth_limit} exceeded near "
                f"]{chain[-1].lo}, {chain[-1].hi}]; gauge may not be positive",
                chain,
            )
        at = _split_point(lo, hi)
        if not lo < at < hi:
            raise DepthLimitError(
                f"cannot split ]{lo}, {hi}] further", _chain_from_log(log, log_idx)
            )
        li = len(log)
        log.append((lo, hi, log_idx))
        stack.append((at, hi, depth + 1, li))
        stack.append((lo, at, depth + 1, li))
        if len(los) > max_cells:
            raise TooManyCellsError(f"cell budget {max_cells} exceeded")

    order = np.argsort(np.asarray(los))
    return Axis1DDivision(
        axis=axis,
        base=base,
        lo=np.asarray(los)[order],
        hi=np.asarray(his)[order],
        tag=np.asarray(tags)[order],
    )


def _chain_from_log(log, idx) -> list[Cell1D]:
    chain = []
    while idx >= 0:
        lo, hi, idx = log[idx]
        chain.append(Cell1D(lo, hi))
    chain.reverse()
    return chain


# ---------------------------------------------------------------------------
# Finite-dimensional boxes
# ---------------------------------------------------------------------------


def cousin_box(
    g: Union[GaugeA, GaugeB],
    domain: DomainSpec,
    depth_limit: int = DEFAULT_DEPTH_LIMIT,
    max_cells: int = 1 << 23,
) -> Division:
    """A fine division of a finite-dimensional product domain.

    Componentwise gauges admit cells per axis, so the division decomposes
    into a tensor product of one-axis divisions. Scalar gauges couple the
    axes and are handled by simultaneous bisection with corner-tag search.
    """
    axes = domain.axes()
    if isinstance(g, GaugeB):
        factors = {
            a: _divide_axis(
                g.component(a), domain.resolve(a), axis=a,
                depth_limit=depth_limit, max_cells=max_cells,
            )
            for a in axes
        }
        if len(axes) == 1:
            return AxisDivision(domain, factors[axes[0]])
        return TensorDivision(domain, factors)
    if not isinstance(g, GaugeA):
        raise TypeError("cousin_box needs a scalar or componentwise gauge")
    return _simultaneous_bisection(g, domain, axes, depth_limit, max_cells)


def _corner_tags(edges: Mapping[AxisLabel, Cell1D]) -> Iterator[PointT]:
    # Lower-left vertex first, remaining corners in lexicographic order.
    axes = list(edges)
    for combo in itertools.product(*((edges[a].lo, edges[a].hi) for a in axes)):
        yield PointT(dict(zip(axes, combo)))


def _scalar_fine(g: GaugeA, tag: PointT, edges: Mapping[AxisLabel, Cell1D]) -> bool:
    d = g.delta_at(tag)
    thr = lambda: g.inf_threshold(tag)
    return all(
        _fine_edge_scalar(d, thr, tag.value(a), e) for a, e in edges.items()
    )


def _simultaneous_bisection(
    g: GaugeA,
    domain: DomainSpec,
    axes: Sequence[AxisLabel],
    depth_limit: int,
    max_cells: int,
) -> ListDivision:
    out: list[TaggedCell] = []
    start = {a: domain.resolve(a) for a in axes}
    stack: list[tuple[dict, int]] = [(start, 0)]
    while stack:
        edges, depth = stack.pop()
        hit = None
        for tag in _corner_tags(edges):
            if _scalar_fine(g, tag, edges):
                hit = tag
                break
        if hit is not None:
            out.append(TaggedCell(hit, BoxCell(edges)))
            if len(out) > max_cells:
                raise TooManyCellsError(f"cell budget {max_cells} exceeded")
            continue
        if depth >= depth_limit:
            raise DepthLimitError(
                f"depth limit {depth_limit} exceeded at {edges}",
                [edges[axes[0]]],
            )
        # Split every axis at once.
        halves = {}
        for a, e in edges.items():
            at = _split_point(e.lo, e.hi)
            if not e.lo < at < e.hi:
                raise DepthLimitError(f"cannot split {e} further", [e])
            halves[a] = e.split(at)
        for combo in itertools.product(*(halves[a] for a in axes)):
            stack.append((dict(zip(axes, combo)), depth + 1))
    out.sort(key=lambda t: tuple(t.cell.edges[a].lo for a in axes))
    return ListDivision(domain, out)


def slice_division(
    g: Union[GaugeA, GaugeB],
    domain: DomainSpec,
    axis_order: Optional[Sequence[AxisLabel]] = None,
    depth_limit: int = DEFAULT_DEPTH_LIMIT,
    max_cells: int = 1 << 23,
) -> Division:
    """Dimension-at-a-time division: slice the first axis fine, recurse.

    For componentwise gauges each axis is independent and the result is the
    tensor product taken in the given order. For scalar gauges the slicing
    gauge of each stage is the scalar gauge with the already-fixed tag
    coordinates substituted; the assembled cells are re-checked and locally
    refined until every item is fine at its tag.
    """
    axes = tuple(axis_order) if axis_order is not None else domain.axes()
    if set(axes) != set(domain.axes()):
        raise ValueError("axis_order must be a permutation of the domain axes")
    if isinstance(g, GaugeB):
        factors = {
            a: _divide_axis(
                g.component(a), domain.resolve(a), axis=a,
                depth_limit=depth_limit, max_cells=max_cells,
            )
            for a in axes
        }
        if len(axes) == 1:
            return AxisDivision(domain, factors[axes[0]])
        return TensorDivision(domain, factors)
    if not isinstance(g, GaugeA):
        raise TypeError("slice_division needs a scalar or componentwise gauge")

    bases = {a: domain.resolve(a) for a in axes}

    def anchor(a: AxisLabel) -> float:
        b = bases[a]
        if not math.isinf(b.lo):
            return b.lo
        return 0.0 if math.isinf(b.hi) else b.hi

    def recurse(fixed: dict, remaining: tuple) -> list[tuple[dict, dict]]:
        a = remaining[0]
        rest_anchor = {r: anchor(r) for r in remaining[1:]}

        def surrogate(y: float, _a=a) -> float:
            return g.delta_at(PointT({**fixed, _a: y, **rest_anchor}))

        slices = _divide_axis(
            Gauge1D(delta=surrogate, inf_rule=_slice_inf_rule(g, fixed, a, rest_anchor)),
            bases[a], axis=a, depth_limit=depth_limit, max_cells=max_cells,
        )
        out = []
        for lo, hi, tag in slices.cells1d():
            if len(remaining) == 1:
                out.append(({a: Cell1D(lo, hi)}, {a: tag}))
            else:
                for sub_edges, sub_tags in recurse(
                    {**fixed, a: tag}, remaining[1:]
                ):
                    out.append(
                        ({a: Cell1D(lo, hi), **sub_edges}, {a: tag, **sub_tags})
                    )
        return out

    items = []
    for edges, tags in recurse({}, axes):
        items.extend(
            _refine_to_fine(g, edges, PointT(tags), depth_limit, max_cells)
        )
    items.sort(key=lambda t: tuple(t.cell.edges[a].lo for a in axes))
    return ListDivision(domain, items)


def _slice_inf_rule(g: GaugeA, fixed: dict, a: AxisLabel, rest: dict):
    def rule(y: float) -> float:
        return g.inf_threshold(PointT({**fixed, a: y, **rest}))

    return rule


def _refine_to_fine(
    g: GaugeA,
    edges: Mapping[AxisLabel, Cell1D],
    tag: PointT,
    depth_limit: int,
    max_cells: int,
) -> list[TaggedCell]:
    """Ensure the assembled box is fine at some vertex; split until it is."""
    out: list[TaggedCell] = []
    stack = [(dict(edges), 0)]
    while stack:
        e, depth = stack.pop()
        hit = None
        if _scalar_fine(g, tag, e) and all(
            c.is_vertex(tag.value(a)) for a, c in e.items()
        ):
            hit = tag
        else:
            for cand in _corner_tags(e):
                if _scalar_fine(g, cand, e):
                    hit = cand
                    break
        if hit is not None:
            out.append(TaggedCell(hit, BoxCell(e)))
            continue
        if depth >= depth_limit:
            raise DepthLimitError(
                f"local refinement exceeded depth {depth_limit}",
                [next(iter(e.values()))],
            )
        longest = max(e, key=lambda a: e[a].length)
        at = _split_point(e[longest].lo, e[longest].hi)
        left, right = e[longest].split(at)
        stack.append(({**e, longest: left}, depth + 1))
        stack.append(({**e, longest: right}, depth + 1))
        if len(out) > max_cells:
            raise TooManyCellsError(f"cell budget {max_cells} exceeded")
    return out


# ---------------------------------------------------------------------------
# Cylinder domains
# ---------------------------------------------------------------------------


def _collect_axis_gauges(
    gnode, dnode, prefix: str, out: dict[AxisLabel, Gauge1D]
) -> None:
    if isinstance(gnode, GaugeLeaf):
        if not isinstance(dnode, LeafSpec):
            raise ConstructionUnsupportedError(
                f"gauge leaf at {prefix!r} does not match the domain tree"
            )
        out[prefix] = gnode.gauge
        return
    if isinstance(gnode, GaugeProduct):
        if not isinstance(dnode, ProductSpec):
            raise ConstructionUnsupportedError(
                f"gauge product at {prefix!r} does not match the domain tree"
            )
        for name, child in gnode.children.items():
            _collect_axis_gauges(
                child, dnode.child(name),
                f"{prefix}{AXIS_SEP}{name}" if prefix else name, out,
            )
        return
    if isinstance(gnode, GaugeCylinder):
        if not isinstance(dnode, CylinderSpec):
            raise ConstructionUnsupportedError(
                f"gauge cylinder at {prefix!r} does not match the domain tree"
            )
        if gnode.L_bound is None:
            raise ConstructionUnsupportedError(
                "constructive cylinder division requires a finite L_bound"
            )
        for atom in sorted(gnode.L_bound):
            if not dnode.has_label(atom):
                raise ConstructionUnsupportedError(
                    f"L_bound label {atom!r} not in the cylinder label set"
                )
            _collect_axis_gauges(
                gnode.child_for(atom), dnode.child,
                f"{prefix}{AXIS_SEP}{atom}" if prefix else atom, out,
            )
        return
    raise TypeError(f"unknown gauge node {type(gnode).__name__}")


def _cylinder_axis_gauges(
    g: Union[CylinderGauge, CompoundGauge], domain: DomainSpec
) -> dict[AxisLabel, Gauge1D]:
    if isinstance(g, CylinderGauge):
        if g.L_bound is None:
            raise ConstructionUnsupportedError(
                "constructive cylinder division requires a finite L_bound"
            )
        root = domain.root
        if not isinstance(root, CylinderSpec):
            raise ConstructionUnsupportedError("domain is not a cylinder")
        out: dict[AxisLabel, Gauge1D] = {}
        for atom in sorted(g.L_bound):
            if not root.has_label(atom):
                raise ConstructionUnsupportedError(
                    f"L_bound label {atom!r} not in the cylinder label set"
                )
            if isinstance(root.child, LeafSpec):
                out[atom] = g.component(atom)
            else:
                raise ConstructionUnsupportedError(
                    "per-axis cylinder gauge over a structured factor; "
                    "use a compound gauge"
                )
        return out
    return _collect_compound(g, domain)


def _collect_compound(g: CompoundGauge, domain: DomainSpec) -> dict:
    out: dict[AxisLabel, Gauge1D] = {}
    _collect_axis_gauges(g.root, domain.root, "", out)
    return out


def _l_violations(
    g: Union[CylinderGauge, CompoundGauge],
    tag: PointT,
    restricted: set,
) -> set:
    """Labels demanded by L at this tag but absent from the restricted set."""
    if isinstance(g, CylinderGauge):
        return set(g.L_at(tag)) - {a.split(AXIS_SEP, 1)[0] for a in restricted}
    missing: set = set()
    _node_l_violations(g.root, "", tag, restricted, missing)
    return missing


def _node_l_violations(node, prefix, tag, restricted, missing) -> None:
    if isinstance(node, GaugeLeaf):
        return
    if isinstance(node, GaugeProduct):
        for name, child in node.children.items():
            _node_l_violations(
                child, f"{prefix}{AXIS_SEP}{name}" if prefix else name,
                tag, restricted, missing,
            )
        return
    pre = prefix + AXIS_SEP if prefix else ""
    atoms = {
        a[len(pre):].split(AXIS_SEP, 1)[0]
        for a in restricted
        if a.startswith(pre)
    }
    want = node.L_at(tag.restrict(prefix))
    missing.update(
        (f"{prefix}{AXIS_SEP}{m}" if prefix else m) for m in (want - atoms)
    )
    for atom in atoms:
        _node_l_violations(
            node.child_for(atom),
            f"{prefix}{AXIS_SEP}{atom}" if prefix else atom,
            tag, restricted, missing,
        )


def cousin_cylinder(
    g: Union[CylinderGauge, CompoundGauge],
    domain: DomainSpec,
    depth_limit: int = DEFAULT_DEPTH_LIMIT,
    max_cells: int = 1 << 23,
    tail: float = 0.0,
    retries: int = 5,
    l_check_samples: int = 256,
    seed: int = 0,
) -> TensorDivision:
    """A gauge-fine division of an infinite product domain.

    The gauge's L_bound fixes the finite restricted axis set N; a fine
    division of the corresponding finite-dimensional section is built per
    axis and lifted to cylinder cells with everything else unrestricted.
    Each produced tag must satisfy N >= L(tag); offending labels trigger
    iterative deepening with bounded retries.
    """
    extra: dict[AxisLabel, Gauge1D] = {}
    for attempt in range(retries + 1):
        axis_gauges = _cylinder_axis_gauges(g, domain)
        axis_gauges.update(extra)
        factors = {
            a: _divide_axis(
                comp, domain.resolve(a), axis=a,
                depth_limit=depth_limit, max_cells=max_cells,
            )
            for a, comp in sorted(axis_gauges.items())
        }
        div = TensorDivision(domain, factors, cylinder=True, tail=tail)
        restricted = set(factors)
        missing = _check_l_containment(
            g, div, restricted, l_check_samples, seed
        )
        if not missing:
            return div
        new = missing - set(extra)
        if not new:
            break
        for label in sorted(new):
            extra[label] = _component_for_label(g, label)
    raise DivisionConstructionError(
        f"L(tag) not contained in the restricted set after {retries} "
        f"deepening retries; last missing labels: {sorted(missing)}"
    )


def _component_for_label(g, label: AxisLabel) -> Gauge1D:
    if isinstance(g, CylinderGauge):
        return g.component(label)
    node: GaugeNode = g.root
    atoms = label.split(AXIS_SEP)
    for atom in atoms:
        if isinstance(node, GaugeProduct):
            node = node.children[atom]
        elif isinstance(node, GaugeCylinder):
            node = node.child_for(atom)
        else:
            raise ConstructionUnsupportedError(
                f"no gauge component for label {label!r}"
            )
    if isinstance(node, GaugeLeaf):
        return node.gauge
    raise ConstructionUnsupportedError(
        f"label {label!r} does not resolve to a one-dimensional gauge"
    )


def _check_l_containment(g, div: TensorDivision, restricted, samples, seed) -> set:
    missing: set = set()
    if div.size <= ITEM_CHECK_CAP:
        for item in div.items():
            missing |= _l_violations(g, item.tag, restricted)
        return missing
    rng = random.Random(seed)
    sizes = [div.factors[a].size for a in div.axes]
    for _ in range(samples):
        idx = tuple(rng.randrange(s) for s in sizes)
        missing |= _l_violations(g, div.item_at(idx).tag, restricted)
    return missing


def construct_division(
    g: Union[Gauge, Gauge1D],
    domain: DomainSpec,
    depth_limit: int = DEFAULT_DEPTH_LIMIT,
    max_cells: int = 1 << 23,
) -> Division:
    """Dispatch to the construction matching the gauge shape."""
    if isinstance(g, Gauge1D):
        axes = domain.axes()
        if len(axes) != 1:
            raise TypeError("a bare 1D gauge needs a one-axis domain")
        return cousin_1d(
            g, domain.resolve(axes[0]), axis=axes[0],
            depth_limit=depth_limit, max_cells=max_cells,
        )
    if isinstance(g, (GaugeA, GaugeB)):
        return cousin_box(g, domain, depth_limit, max_cells)
    if isinstance(g, (CylinderGauge, CompoundGauge)):
        return cousin_cylinder(g, domain, depth_limit, max_cells)
    raise TypeError(f"cannot construct divisions for {type(g).__name__}")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class Violation:
    kind: str  # disjointness | cover | association | fineness | l-containment
    message: str
    witness: Optional[dict] = None

    def to_json(self):
        return {"kind": self.kind, "message": self.message, "witness": self.witness}


@dataclass
class DivisionCertificate:
    """Validation outcome: checks performed, witnesses, itemized violations."""

    division_size: int
    domain: DomainSpec
    gauge_desc: str
    checks: dict
    violations: list[Violation] = field(default_factory=list)
    witnesses: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self):
        return {
            "division_size": self.division_size,
            "domain": self.domain.to_json(),
            "gauge": self.gauge_desc,
            "checks": self.checks,
            "ok": self.ok,
            "violations": [v.to_json() for v in self.violations],
            "witnesses": self.witnesses,
        }


def _sample_coord(base: Cell1D, rng: random.Random) -> float:
    if base.bounded:
        return base.lo + (1.0 - rng.random()) * (base.hi - base.lo)
    heavy = 50.0 if rng.random() < 0.1 else 2.0
    if math.isinf(base.lo) and math.isinf(base.hi):
        return rng.normalvariate(0.0, heavy)
    if math.isinf(base.lo):
        return base.hi - heavy * rng.expovariate(1.0)
    return base.lo + heavy * rng.expovariate(1.0)


def _axis_partition_violations(f: Axis1DDivision) -> list[Violation]:
    out = []
    if f.size == 0:
        return [Violation("cover", f"axis {f.axis}: empty division")]
    if f.lo[0] != f.base.lo:
        out.append(
            Violation(
                "cover",
                f"axis {f.axis}: first cell starts at {f.lo[0]}, base at {f.base.lo}",
            )
        )
    if f.hi[-1] != f.base.hi:
        out.append(
            Violation(
                "cover",
                f"axis {f.axis}: last cell ends at {f.hi[-1]}, base at {f.base.hi}",
            )
        )
    gaps = np.nonzero(f.lo[1:] != f.hi[:-1])[0]
    for i in gaps[:8]:
        kind = "disjointness" if f.lo[i + 1] < f.hi[i] else "cover"
        out.append(
            Violation(
                kind,
                f"axis {f.axis}: cells {i} and {i + 1} meet at "
                f"{f.hi[i]} vs {f.lo[i + 1]}",
                witness={"index": int(i)},
            )
        )
    return out


def _axis_association_violations(f: Axis1DDivision) -> list[Violation]:
    bad = np.nonzero((f.tag != f.lo) & (f.tag != f.hi))[0]
    return [
        Violation(
            "association",
            f"axis {f.axis}: tag {f.tag[i]} is not a vertex of "
            f"]{f.lo[i]}, {f.hi[i]}]",
            witness={"index": int(i)},
        )
        for i in bad[:8]
    ]


def _axis_fineness_violations(f: Axis1DDivision, comp: Gauge1D) -> list[Violation]:
    out = []
    finite = np.isfinite(f.lo) & np.isfinite(f.hi)
    if comp.const_delta is not None:
        # Vectorized bounded-cell check; unbounded cells fall through below.
        bad = np.nonzero(finite & ~((f.hi - f.lo) < comp.const_delta))[0]
        candidates = list(bad) + list(np.nonzero(~finite)[0])
    else:
        candidates = range(f.size)
    for i in candidates:
        cell = Cell1D(float(f.lo[i]), float(f.hi[i]))
        if not fine_1d(comp, float(f.tag[i]), cell):
            out.append(
                Violation(
                    "fineness",
                    f"axis {f.axis}: cell ]{cell.lo}, {cell.hi}] not fine at "
                    f"tag {f.tag[i]}",
                    witness={"index": int(i)},
                )
            )
            if len(out) >= 8:
                break
    return out


def validate(
    d: Division,
    g: Optional[Gauge] = None,
    samples: int = 256,
    seed: int = 0,
    item_cap: int = ITEM_CHECK_CAP,
) -> DivisionCertificate:
    """Check disjointness, cover, association, and fineness of a division.

    Structured (per-axis) divisions get exact sweeps on every axis plus
    Monte Carlo point-location on full points; list divisions get exact
    pairwise and per-item checks. Fineness checks that need the full tag
    point are sampled above ``item_cap``.
    """
    violations: list[Violation] = []
    checks: dict = {"samples": samples}
    rng = random.Random(seed)

    factors: Optional[dict[AxisLabel, Axis1DDivision]] = None
    if isinstance(d, AxisDivision):
        factors = {d.axis1d.axis: d.axis1d}
    elif isinstance(d, TensorDivision):
        factors = dict(d.factors)

    if factors is not None:
        checks["structure"] = "tensor-exact"
        for f in factors.values():
            violations += _axis_partition_violations(f)
            violations += _axis_association_violations(f)
        violations += _mc_cover_tensor(d, factors, samples, rng)
        if g is not None:
            violations += _tensor_fineness(d, factors, g, item_cap, rng)
    else:
        checks["structure"] = "list-pairwise"
        items = list(d.items())
        violations += _list_disjointness(items)
        violations += _list_projection_cover(items, d.domain)
        violations += _mc_cover_list(items, d.domain, samples, rng)
        for idx, t in enumerate(items):
            if not associated(t.tag, t.cell):
                violations.append(
                    Violation(
                        "association",
                        f"item {idx}: tag is not a vertex",
                        witness={"index": idx},
                    )
                )
        if g is not None:
            for idx, t in enumerate(items):
                try:
                    ok = is_fine(g, t)
                except Exception as exc:  # association errors surface here
                    ok = False
                    violations.append(
                        Violation("fineness", f"item {idx}: {exc}")
                    )
                    continue
                if not ok:
                    violations.append(
                        Violation(
                            "fineness",
                            f"item {idx}: not fine at its tag",
                            witness={"index": idx, "item": t.to_json()},
                        )
                    )

    witnesses: list[dict] = []
    if d.size <= 64:
        for idx, t in enumerate(d.items()):
            lengths = {a: e.length for a, e in t.cell.edges.items()}
            witnesses.append(
                {"index": idx, "edge_lengths": {a: repr(v) for a, v in lengths.items()}}
            )

    gauge_desc = "" if g is None else getattr(g, "spec", None) or type(g).__name__
    return DivisionCertificate(
        division_size=d.size,
        domain=d.domain,
        gauge_desc=str(gauge_desc),
        checks=checks,
        violations=violations,
        witnesses=witnesses,
    )


def _mc_cover_tensor(d, factors, samples, rng) -> list[Violation]:
    out = []
    for _ in range(samples):
        coords = {
            a: _sample_coord(f.base, rng) for a, f in factors.items()
        }
        hits = 1
        for a, f in factors.items():
            if f.locate(coords[a]) < 0:
                hits = 0
                break
        if hits != 1:
            out.append(
                Violation(
                    "cover",
                    f"sampled point in {hits} cells (expected 1)",
                    witness={"point": {a: v for a, v in coords.items()}},
                )
            )
            if len(out) >= 8:
                break
    return out


def _mc_cover_list(items, domain, samples, rng) -> list[Violation]:
    axes = set()
    for t in items:
        axes |= set(t.cell.edges)
    bases = {a: domain.resolve(a) for a in axes}
    out = []
    for _ in range(samples):
        p = PointT({a: _sample_coord(b, rng) for a, b in bases.items()})
        hits = sum(1 for t in items if t.cell.contains(p))
        if hits != 1:
            out.append(
                Violation(
                    "cover",
                    f"sampled point in {hits} cells (expected 1)",
                    witness={"point": p.to_json()},
                )
            )
            if len(out) >= 8:
                break
    return out


def _list_disjointness(items) -> list[Violation]:
    out = []
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            if items[i].cell.overlaps(items[j].cell):
                out.append(
                    Violation(
                        "disjointness",
                        f"cells {i} and {j} overlap",
                        witness={
                            "cells": [items[i].cell.to_json(), items[j].cell.to_json()]
                        },
                    )
                )
                if len(out) >= 8:
                    return out
    return out


def _list_projection_cover(items, domain) -> list[Violation]:
    axes = set()
    for t in items:
        axes |= set(t.cell.edges)
    out = []
    for a in sorted(axes):
        base = domain.resolve(a)
        pieces = sorted(
            (t.cell.edges[a].lo, t.cell.edges[a].hi)
            for t in items
            if a in t.cell.edges
        )
        hi = base.lo
        for lo, h in pieces:
            if lo > hi:
                out.append(
                    Violation(
                        "cover",
                        f"axis {a}: projection gap ]{hi}, {lo}]",
                    )
                )
                break
            hi = max(hi, h)
        if hi < base.hi:
            out.append(
                Violation("cover", f"axis {a}: projection stops at {hi}")
            )
    return out


def _tensor_fineness(d, factors, g, item_cap, rng) -> list[Violation]:
    out: list[Violation] = []
    if isinstance(g, Gauge1D):
        for f in factors.values():
            out += _axis_fineness_violations(f, g)
        return out
    if isinstance(g, GaugeB):
        for a, f in factors.items():
            out += _axis_fineness_violations(f, g.component(a))
        return out
    # Scalar / cylinder gauges need full tags; exact when small, sampled
    # otherwise.
    if d.size <= item_cap:
        for idx, t in enumerate(d.items()):
            try:
                ok = is_fine(g, t)
            except Exception as exc:
                out.append(Violation("fineness", f"item {idx}: {exc}"))
                continue
            if not ok:
                out.append(
                    Violation(
                        "fineness",
                        f"item {idx}: not fine at its tag",
                        witness={"index": idx},
                    )
                )
            if len(out) >= 8:
                break
        return out
    if not isinstance(d, TensorDivision):
        return out
    sizes = [factors[a].size for a in d.axes]
    for _ in range(512):
        idx = tuple(rng.randrange(s) for s in sizes)
        t = d.item_at(idx)
        if not is_fine(g, t):
            out.append(
                Violation(
                    "fineness",
                    "sampled item not fine at its tag",
                    witness={"index": list(idx)},
                )
            )
            if len(out) >= 8:
                break
    return out


# ---------------------------------------------------------------------------
# The depth-q binary partition of the extended line
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BinaryCellScheme:
    """Depth-q partition: two unbounded tails plus dyadic cells on ]-q, q]."""

    q: int

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("depth must be a positive integer")

    def cells(self) -> Iterator[Cell1D]:
        q = self.q
        yield Cell1D(-math.inf, -q)
        step = 2.0 ** (-q)
        for s in range(-q * (1 << q), q * (1 << q)):
            yield Cell1D(s * step, (s + 1) * step)
        yield Cell1D(q, math.inf)

    @property
    def size(self) -> int:
        return 2 * self.q * (1 << self.q) + 2
