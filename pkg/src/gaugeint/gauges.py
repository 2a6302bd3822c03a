"""Gauge variants and the fineness predicates that admit tagged cells.

A gauge assigns positivity constraints to prospective tag points. Four
shapes are supported:

* ``Gauge1D``   - a positive function delta(y) on the extended line, plus a
                  threshold rule for unbounded edges tagged at +/-inf.
* ``GaugeA``    - a single scalar delta(x) on a finite-dimensional domain;
                  every edge of an admitted cell must be shorter than it.
* ``GaugeB``    - one Gauge1D per axis; each edge is checked against its own
                  component at the tag coordinate.
* ``CylinderGauge`` / ``CompoundGauge`` - for infinite products: a function
                  L(x) selecting a finite axis set that the cell's restricted
                  set must contain, plus per-axis components (recursively
                  structured for products of products).

Fineness is strict: an edge of length exactly delta is rejected. For an
unbounded edge the usual length test is replaced by the threshold rule:
]b, +inf[ is admitted at tag +inf iff b > B, and ]-inf, a] at tag -inf iff
a < -B, where B is the gauge's inf_rule at that tag (reciprocal of delta
when not given explicitly).
"""

from __future__ import annotations

import bisect as _bisect
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Optional, Union

from .cells import (
    AXIS_SEP,
    AxisLabel,
    BoxCell,
    Cell,
    Cell1D,
    CylinderCell,
    DomainSpec,
    PointT,
    TaggedCell,
    associated,
)


class AssociationError(ValueError):
    """Fineness was queried for a pair whose tag is not a vertex."""


class GaugeDomainError(ValueError):
    """Gauge and cell disagree about the domain's axes."""


InfRule = Union[float, Callable[[float], float], None]


@dataclass(frozen=True)
class Gauge1D:
    """delta(y) > 0 on the extended line; inf_rule thresholds tail cells."""

    delta: Callable[[float], float]
    inf_rule: InfRule = None
    const_delta: Optional[float] = None  # set when delta is a known constant

    def delta_at(self, y: float) -> float:
        d = self.const_delta if self.const_delta is not None else self.delta(y)
        if not d > 0:
            raise ValueError(f"gauge not positive at {y}: delta={d}")
        return d

    def inf_threshold(self, tag: float) -> float:
        if self.inf_rule is None:
            return 1.0 / self.delta_at(tag)
        if callable(self.inf_rule):
            return self.inf_rule(tag)
        return self.inf_rule


def gauge1d_const(c: float, inf_rule: InfRule = None) -> Gauge1D:
    return Gauge1D(delta=lambda y, _c=c: _c, inf_rule=inf_rule, const_delta=c)


def fine_1d(g: Gauge1D, tag: float, cell: Cell1D) -> bool:
    """One-dimensional fineness of an associated (tag, cell) pair."""
    if tag == math.inf:
        if cell.hi != math.inf:
            return False
        return not math.isinf(cell.lo) and cell.lo > g.inf_threshold(tag)
    if tag == -math.inf:
        if cell.lo != -math.inf:
            return False
        return not math.isinf(cell.hi) and cell.hi < -g.inf_threshold(tag)
    return cell.length < g.delta_at(tag)


@dataclass(frozen=True)
class GaugeA:
    """Scalar gauge delta(x) on a finite-dimensional domain."""

    delta: Callable[[PointT], float]
    inf_rule: Union[float, Callable[[PointT], float], None] = None

    def delta_at(self, x: PointT) -> float:
        d = self.delta(x)
        if not d > 0:
            raise ValueError(f"gauge not positive: delta={d}")
        return d

    def inf_threshold(self, x: PointT) -> float:
        if self.inf_rule is None:
            return 1.0 / self.delta_at(x)
        if callable(self.inf_rule):
            return self.inf_rule(x)
        return self.inf_rule


@dataclass(frozen=True)
class GaugeB:
    """Componentwise gauge: one Gauge1D per axis."""

    components: Mapping[AxisLabel, Gauge1D]

    def __post_init__(self):
        object.__setattr__(self, "components", dict(self.components))

    def component(self, axis: AxisLabel) -> Gauge1D:
        try:
            return self.components[axis]
        except KeyError:
            raise GaugeDomainError(f"no gauge component for axis {axis!r}")


ComponentSource = Union[
    Gauge1D, Mapping[AxisLabel, Gauge1D], Callable[[AxisLabel], Gauge1D]
]


def _resolve_component(source: ComponentSource, axis: AxisLabel) -> Gauge1D:
    if isinstance(source, Gauge1D):
        return source
    if callable(source):
        return source(axis)
    try:
        return source[axis]
    except KeyError:
        raise GaugeDomainError(f"no gauge component for axis {axis!r}")


@dataclass(frozen=True)
class CylinderGauge:
    """Pair (L, per-axis components) for an infinite product of lines.

    L maps each point to the finite axis set any admissible cell must
    restrict. ``L_bound``, when present, is a finite superset of every L(x)
    and is what makes constructive division building possible.
    """

    L: Callable[[PointT], frozenset]
    components: ComponentSource
    L_bound: Optional[frozenset] = None

    def component(self, axis: AxisLabel) -> Gauge1D:
        return _resolve_component(self.components, axis)

    def L_at(self, x: PointT) -> frozenset:
        s = frozenset(self.L(x))
        if not s:
            raise ValueError("L(x) must be non-empty")
        return s


# --- compound gauges: a tree mirroring the domain tree --------------------


@dataclass(frozen=True)
class GaugeLeaf:
    gauge: Gauge1D


@dataclass(frozen=True)
class GaugeProduct:
    children: Mapping[str, "GaugeNode"]

    def __post_init__(self):
        object.__setattr__(self, "children", dict(self.children))


@dataclass(frozen=True)
class GaugeCylinder:
    L: Callable[[PointT], frozenset]
    child: Union["GaugeNode", Mapping[str, "GaugeNode"], Callable[[str], "GaugeNode"]]
    L_bound: Optional[frozenset] = None

    def child_for(self, atom: str) -> "GaugeNode":
        if isinstance(self.child, (GaugeLeaf, GaugeProduct, GaugeCylinder)):
            return self.child
        if callable(self.child):
            return self.child(atom)
        try:
            return self.child[atom]
        except KeyError:
            raise GaugeDomainError(f"no child gauge for label {atom!r}")

    def L_at(self, x: PointT) -> frozenset:
        s = frozenset(self.L(x))
        if not s:
            raise ValueError("L(x) must be non-empty")
        return s


GaugeNode = Union[GaugeLeaf, GaugeProduct, GaugeCylinder]


@dataclass(frozen=True)
class CompoundGauge:
    root: GaugeNode


Gauge = Union[GaugeA, GaugeB, CylinderGauge, CompoundGauge]


# ---------------------------------------------------------------------------
# Fineness
# ---------------------------------------------------------------------------


def _fine_edge_scalar(delta: float, threshold_fn, tag_coord: float, edge: Cell1D) -> bool:
    # Shared edge test for scalar gauges: bounded edges use the length bound,
    # unbounded edges the threshold at the infinite vertex.
    if tag_coord == math.inf:
        if edge.hi != math.inf:
            return False
        return not math.isinf(edge.lo) and edge.lo > threshold_fn()
    if tag_coord == -math.inf:
        if edge.lo != -math.inf:
            return False
        return not math.isinf(edge.hi) and edge.hi < -threshold_fn()
    return edge.length < delta


def is_fine(gauge: Gauge, tagged: TaggedCell) -> bool:
    """Does the gauge admit this associated tagged cell?"""
    tag, cell = tagged.tag, tagged.cell
    if not associated(tag, cell):
        raise AssociationError("tag is not a vertex of the cell")

    if isinstance(gauge, GaugeA):
        d = gauge.delta_at(tag)
        thr = lambda: gauge.inf_threshold(tag)
        return all(
            _fine_edge_scalar(d, thr, tag.value(a), e)
            for a, e in cell.edges.items()
        )

    if isinstance(gauge, GaugeB):
        return all(
            fine_1d(gauge.component(a), tag.value(a), e)
            for a, e in cell.edges.items()
        )

    if isinstance(gauge, CylinderGauge):
        if not isinstance(cell, CylinderCell):
            raise GaugeDomainError("cylinder gauge needs a cylinder cell")
        restricted = set(cell.restricted)
        if not gauge.L_at(tag) <= restricted:
            return False
        return all(
            fine_1d(gauge.component(a), tag.value(a), cell.edge(a))
            for a in restricted
        )

    if isinstance(gauge, CompoundGauge):
        return _fine_node(gauge.root, "", tag, cell)

    raise TypeError(f"unknown gauge type {type(gauge).__name__}")


def _join(prefix: str, atom: str) -> str:
    return f"{prefix}{AXIS_SEP}{atom}" if prefix else atom


def _atoms_under(cell: Cell, prefix: str) -> set:
    pre = prefix + AXIS_SEP if prefix else ""
    atoms = set()
    for a in cell.edges:
        if a.startswith(pre):
            atoms.add(a[len(pre):].split(AXIS_SEP, 1)[0])
    return atoms


def _fine_node(node: GaugeNode, prefix: str, tag: PointT, cell: Cell) -> bool:
    if isinstance(node, GaugeLeaf):
        edge = cell.edges.get(prefix)
        if edge is None:
            # Implicit full-base edge under a restricted label: only fine if
            # the tag coordinate happens to sit at a vertex and passes.
            if not isinstance(cell, CylinderCell):
                raise GaugeDomainError(f"box cell missing edge for {prefix!r}")
            edge = cell.domain.resolve(prefix)
            if not edge.is_vertex(tag.value(prefix)):
                return False
        return fine_1d(node.gauge, tag.value(prefix), edge)

    if isinstance(node, GaugeProduct):
        return all(
            _fine_node(child, _join(prefix, name), tag, cell)
            for name, child in node.children.items()
        )

    # GaugeCylinder: the restricted label set at this node must contain
    # L(sub-point), and every restricted label's factor must be fine.
    atoms = _atoms_under(cell, prefix)
    if not node.L_at(tag.restrict(prefix)) <= atoms:
        return False
    return all(
        _fine_node(node.child_for(a), _join(prefix, a), tag, cell)
        for a in atoms
    )


# ---------------------------------------------------------------------------
# Gauge algebra
# ---------------------------------------------------------------------------


def min_combine(g: GaugeB) -> GaugeA:
    """Scalar gauge taking the componentwise minimum.

    Every cell admitted by the result is admitted by g: each edge is shorter
    than the minimum of the component deltas, hence shorter than its own
    component's delta, and the threshold is the maximum of the component
    thresholds at infinite coordinates.
    """
    comps = dict(g.components)

    def delta(x: PointT) -> float:
        return min(c.delta_at(x.value(a)) for a, c in comps.items())

    def inf_rule(x: PointT) -> float:
        thresholds = [
            c.inf_threshold(x.value(a))
            for a, c in comps.items()
            if math.isinf(x.value(a))
        ]
        return max(thresholds) if thresholds else 1.0

    return GaugeA(delta=delta, inf_rule=inf_rule)


def find_b_not_a(
    gB: GaugeB,
    gA: GaugeA,
    domain: DomainSpec,
    budget: int = 1000,
    seed: int = 0,
) -> Optional[TaggedCell]:
    """Search for a tagged cell that is gB-fine but not gA-fine.

    Randomized probing on a bounded finite-dimensional domain: tags are
    sampled uniformly, candidate edge lengths between the scalar bound and
    the component bounds. Returns None when the budget is exhausted, which
    is inconclusive rather than a proof of dominance.
    """
    axes = domain.axes()
    bases = {a: domain.resolve(a) for a in axes}
    for a, b in bases.items():
        if not b.bounded:
            raise GaugeDomainError(f"axis {a!r} is unbounded; search needs a bounded box")
    rng = random.Random(seed)

    for _ in range(budget):
        coords = {a: rng.uniform(bases[a].lo, bases[a].hi) for a in axes}
        tag = PointT(coords)
        da = gA.delta_at(tag)
        edges = {}
        ok = True
        for a in axes:
            dj = gB.component(a).delta_at(coords[a])
            low = da if da < dj else dj / 2
            length = rng.uniform(low, dj)
            if not 0 < length < dj:
                ok = False
                break
            x, base = coords[a], bases[a]
            if x - length >= base.lo:
                edges[a] = Cell1D(x - length, x)
            elif x + length <= base.hi:
                edges[a] = Cell1D(x, x + length)
            else:
                ok = False
                break
        if not ok:
            continue
        candidate = TaggedCell(tag, BoxCell(edges))
        if is_fine(gB, candidate) and not is_fine(gA, candidate):
            return candidate
    return None


# ---------------------------------------------------------------------------
# Shrinking (gauge schedules halve deltas and push thresholds out)
# ---------------------------------------------------------------------------


def _scale_inf_rule(rule: InfRule, factor: float) -> InfRule:
    if rule is None:
        return None  # reciprocal of delta scales automatically
    if callable(rule):
        return lambda y, _r=rule, _f=factor: _r(y) * _f
    return rule * factor


def scale_gauge1d(g: Gauge1D, delta_factor: float) -> Gauge1D:
    inf_factor = 1.0 / delta_factor
    return Gauge1D(
        delta=lambda y, _g=g, _f=delta_factor: _g.delta_at(y) * _f,
        inf_rule=_scale_inf_rule(g.inf_rule, inf_factor),
        const_delta=None if g.const_delta is None else g.const_delta * delta_factor,
    )


def scale_gauge(g: Gauge, delta_factor: float) -> Gauge:
    """Uniformly scale all deltas (thresholds scale reciprocally)."""
    if isinstance(g, Gauge1D):
        return scale_gauge1d(g, delta_factor)
    if isinstance(g, GaugeA):
        inf_factor = 1.0 / delta_factor
        rule = g.inf_rule
        if rule is None:
            new_rule = None
        elif callable(rule):
            new_rule = lambda x, _r=rule, _f=inf_factor: _r(x) * _f
        else:
            new_rule = rule * inf_factor
        return GaugeA(
            delta=lambda x, _g=g, _f=delta_factor: _g.delta_at(x) * _f,
            inf_rule=new_rule,
        )
    if isinstance(g, GaugeB):
        return GaugeB(
            {a: scale_gauge1d(c, delta_factor) for a, c in g.components.items()}
        )
    if isinstance(g, CylinderGauge):
        return CylinderGauge(
            L=g.L,
            components=_scale_component_source(g.components, delta_factor),
            L_bound=g.L_bound,
        )
    if isinstance(g, CompoundGauge):
        return CompoundGauge(_scale_node(g.root, delta_factor))
    raise TypeError(f"cannot scale {type(g).__name__}")


def _scale_component_source(source: ComponentSource, factor: float) -> ComponentSource:
    if isinstance(source, Gauge1D):
        return scale_gauge1d(source, factor)
    if callable(source):
        return lambda a, _s=source, _f=factor: scale_gauge1d(_s(a), _f)
    return {a: scale_gauge1d(c, factor) for a, c in source.items()}


def _scale_node(node: GaugeNode, factor: float) -> GaugeNode:
    if isinstance(node, GaugeLeaf):
        return GaugeLeaf(scale_gauge1d(node.gauge, factor))
    if isinstance(node, GaugeProduct):
        return GaugeProduct(
            {n: _scale_node(c, factor) for n, c in node.children.items()}
        )
    child = node.child
    if isinstance(child, (GaugeLeaf, GaugeProduct, GaugeCylinder)):
        new_child = _scale_node(child, factor)
    elif callable(child):
        new_child = lambda a, _c=child, _f=factor: _scale_node(_c(a), _f)
    else:
        new_child = {a: _scale_node(c, factor) for a, c in child.items()}
    return GaugeCylinder(L=node.L, child=new_child, L_bound=node.L_bound)


# ---------------------------------------------------------------------------
# JSON gauge specs
# ---------------------------------------------------------------------------

_FAREY_CACHE: dict[int, tuple[dict, float]] = {}


def farey_table(dmax: int) -> dict:
    """float(p/q) -> enumeration rank, for p/q in [0,1] with q <= dmax.

    The floats of these fractions are the designated 'rational' set of the
    countable-exceptional-set gauges; ranks order by denominator then
    numerator, starting at 1.
    """
    if dmax not in _FAREY_CACHE:
        seen = {}
        rank = 1
        for q in range(1, dmax + 1):
            for p in range(0, q + 1):
                if math.gcd(p, q) == 1:
                    x = p / q
                    if x not in seen:
                        seen[x] = rank
                        rank += 1
        _FAREY_CACHE[dmax] = (seen, float(rank))
    return _FAREY_CACHE[dmax][0]


def build_delta(spec: Mapping) -> tuple[Callable[[float], float], Optional[float]]:
    """Build a 1D delta function from a named-formula JSON spec.

    Returns (callable, constant value or None).
    """
    form = spec["form"]
    if form == "const":
        c = float(spec["c"])
        return (lambda y, _c=c: _c), c
    if form == "affine":
        a, b = float(spec["a"]), float(spec["b"])
        eps = float(spec.get("eps", 1e-12))
        cap = float(spec.get("cap", 1e6))

        def delta(y, _a=a, _b=b, _e=eps, _m=cap):
            if math.isinf(y):
                v = math.inf if (_a > 0) == (y > 0) else -math.inf
            else:
                v = _a * y + _b
            return min(max(v, _e), _m)

        return delta, None
    if form == "piecewise":
        breaks = [float(v) for v in spec["breaks"]]
        values = [float(v) for v in spec["values"]]
        if len(values) != len(breaks) + 1:
            raise ValueError("piecewise needs len(values) == len(breaks) + 1")

        def delta(y, _b=breaks, _v=values):
            return _v[_bisect.bisect_left(_b, y)]

        return delta, None
    if form == "linear_floor":
        a = float(spec["a"])
        floor = float(spec["floor"])

        def delta(y, _a=a, _f=floor):
            if math.isinf(y):
                return _f
            return max(_a * y, _f)

        return delta, None
    if form == "rank_decay":
        # Tiny deltas on a designated countable set, constant elsewhere:
        # delta = eps * 2^-rank on the set, base off it.
        eps = float(spec["eps"])
        base = float(spec.get("base", 0.25))
        table = farey_table(int(spec.get("dmax", 16)))

        def delta(y, _t=table, _e=eps, _b=base):
            r = _t.get(y)
            return _b if r is None else _e * 2.0 ** (-r)

        return delta, None
    raise ValueError(f"unknown delta form {form!r}")


def build_gauge1d(spec: Mapping) -> Gauge1D:
    delta, const = build_delta(spec["delta"])
    rule = spec.get("inf_rule")
    return Gauge1D(delta=delta, inf_rule=rule, const_delta=const)


def _build_L(spec: Mapping) -> Callable[[PointT], frozenset]:
    form = spec["form"]
    if form == "const":
        labels = frozenset(spec["labels"])
        return lambda x, _l=labels: _l
    if form == "piecewise":
        axis = spec["axis"]
        cuts = [float(v) for v in spec["cuts"]]
        sets = [frozenset(s) for s in spec["sets"]]
        if len(sets) != len(cuts) + 1:
            raise ValueError("piecewise L needs len(sets) == len(cuts) + 1")

        def L(x, _a=axis, _c=cuts, _s=sets):
            return _s[_bisect.bisect_left(_c, x.value(_a))]

        return L
    raise ValueError(f"unknown L form {form!r}")


def _build_node(spec: Mapping) -> GaugeNode:
    kind = spec["kind"]
    if kind == "leaf":
        return GaugeLeaf(build_gauge1d(spec["gauge"]))
    if kind == "product":
        return GaugeProduct(
            {n: _build_node(c) for n, c in spec["children"].items()}
        )
    if kind == "cylinder":
        if "children" in spec:
            child = {n: _build_node(c) for n, c in spec["children"].items()}
        else:
            child = _build_node(spec["child"])
        bound = spec.get("L_bound")
        return GaugeCylinder(
            L=_build_L(spec["L"]),
            child=child,
            L_bound=None if bound is None else frozenset(bound),
        )
    raise ValueError(f"unknown gauge node kind {kind!r}")


def build_gauge(spec: Mapping, domain: Optional[DomainSpec] = None) -> Gauge:
    """Build a gauge object from its JSON description."""
    kind = spec["kind"]
    if kind == "a":
        dspec = spec["delta"]
        form = dspec["form"]
        rule = spec.get("inf_rule")
        if form in ("product_of_axes", "min_of_axes"):
            factors = {
                a: build_delta(f)[0] for a, f in dspec["factors"].items()
            }
            if form == "product_of_axes":
                def delta(x, _f=factors):
                    out = 1.0
                    for a, fn in _f.items():
                        out *= fn(x.value(a))
                    return out
            else:
                def delta(x, _f=factors):
                    return min(fn(x.value(a)) for a, fn in _f.items())
            g: Gauge = GaugeA(delta=delta, inf_rule=rule)
        else:
            fn, _ = build_delta(dspec)
            g = GaugeA(delta=lambda x, _fn=fn: _fn(0.0), inf_rule=rule)
            if form != "const":
                raise ValueError(
                    "scalar gauges support const, product_of_axes, min_of_axes"
                )
    elif kind == "b":
        g = GaugeB({a: build_gauge1d(c) for a, c in spec["components"].items()})
    elif kind == "cylinder":
        if "components" in spec:
            comps: ComponentSource = {
                a: build_gauge1d(c) for a, c in spec["components"].items()
            }
        else:
            comps = build_gauge1d(spec["component"])
        bound = spec.get("L_bound")
        g = CylinderGauge(
            L=_build_L(spec["L"]),
            components=comps,
            L_bound=None if bound is None else frozenset(bound),
        )
    elif kind == "compound":
        g = CompoundGauge(_build_node(spec["root"]))
    else:
        raise ValueError(f"unknown gauge kind {kind!r}")
    object.__setattr__(g, "spec", dict(spec))
    return g
