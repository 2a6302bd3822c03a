"""Riemann sums over divisions and the gauge-refinement convergence loop.

The integral of a cell function h(x, I) is estimated by building a fine
division for the current gauge, summing h over its tagged cells, shrinking
the gauge, and repeating until two successive estimates agree within the
requested tolerance. The true gauge needed for a given accuracy is unknowable
in general, so agreement of successive refinements is the stopping heuristic
and non-convergence is reported rather than papered over.

Riemann sums use exact compensated summation (error-free transformations via
``math.fsum``), so permutations of the same division give identical values.
Sums over tensor-structured divisions of separable integrands factor into
per-axis sums, which is what makes tight tolerances affordable: a
componentwise-fine division of a square at delta ~1e-6 has ~1e12 cells and
can only ever be summed in factored form.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .cells import (
    AxisLabel,
    BoxCell,
    Cell,
    Cell1D,
    DomainSpec,
    PointT,
    box_domain,
    line_domain,
)
from .division import (
    AxisDivision,
    Axis1DDivision,
    Division,
    ListDivision,
    TensorDivision,
    construct_division,
)
from .gauges import (
    Gauge,
    Gauge1D,
    GaugeB,
    build_delta,
    farey_table,
    gauge1d_const,
    scale_gauge,
)

ITERATE_CAP = 2_000_000


class NonFiniteTermError(ArithmeticError):
    """The integrand produced a non-finite value on a division item."""


# ---------------------------------------------------------------------------
# Cell functions
# ---------------------------------------------------------------------------

AxisEval = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass
class CellFunction:
    """Integrand h(x, I): a pure function of the tag point and the cell.

    ``axis_eval`` is an optional vectorized form for one-axis divisions
    (arrays of lo, hi, tag). ``factors`` declares a separable product
    h = prod_a h_a(x_a, I_a), enabling factored sums over tensor divisions.
    ``gauge_factory`` suggests a per-axis starting gauge for a tolerance.
    """

    name: str
    evaluate: Callable[[PointT, Cell], float]
    kind: str = "general"
    params: dict = field(default_factory=dict)
    axis_eval: Optional[AxisEval] = None
    factors: Optional[Mapping[AxisLabel, "CellFunction"]] = None
    gauge_factory: Optional[Callable[[Cell1D, float], Gauge1D]] = None


@dataclass(frozen=True)
class IntegralResult:
    estimate: float
    tolerance_achieved: float
    refinement_depth: int
    division_size: int
    converged: bool
    rounds: tuple = ()  # (round, cells, estimate, delta_prev) per round

    def to_json(self):
        return {
            "estimate": self.estimate,
            "tolerance_achieved": self.tolerance_achieved,
            "refinement_depth": self.refinement_depth,
            "division_size": self.division_size,
            "converged": self.converged,
            "rounds": [
                {
                    "round": r,
                    "cells": c,
                    "estimate": e,
                    "delta_prev": d,
                }
                for (r, c, e, d) in self.rounds
            ],
        }


@dataclass
class GaugeSchedule:
    """Initial gauge plus a shrink rule: deltas scale down each round and
    unbounded-edge thresholds scale up reciprocally."""

    initial: Union[Gauge, Gauge1D]
    shrink_factor: float = 0.5
    depth_limit: int = 64
    max_cells: int = 1 << 23
    transform: Optional[Callable[[int, Union[Gauge, Gauge1D]], Union[Gauge, Gauge1D]]] = None

    def __post_init__(self):
        if not 0 < self.shrink_factor < 1:
            raise ValueError("shrink factor must lie in ]0, 1[")

    def at(self, round_: int) -> Union[Gauge, Gauge1D]:
        g = scale_gauge(self.initial, self.shrink_factor**round_)
        if self.transform is not None:
            g = self.transform(round_, g)
        return g


# ---------------------------------------------------------------------------
# Riemann sums
# ---------------------------------------------------------------------------


def _fsum_chunked(values, workers: int) -> float:
    if workers <= 1:
        return math.fsum(values)
    values = np.asarray(values, dtype=float)
    chunks = np.array_split(values, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        partials = list(pool.map(math.fsum, chunks))
    return math.fsum(partials)


def _axis_terms(h: CellFunction, f: Axis1DDivision) -> np.ndarray:
    if h.axis_eval is not None:
        vals = np.asarray(h.axis_eval(f.lo, f.hi, f.tag), dtype=float)
    else:
        vals = np.empty(f.size)
        a = f.axis
        for i, (lo, hi, tag) in enumerate(f.cells1d()):
            vals[i] = h.evaluate(PointT({a: tag}), BoxCell({a: Cell1D(lo, hi)}))
    if not np.isfinite(vals).all():
        i = int(np.nonzero(~np.isfinite(vals))[0][0])
        raise NonFiniteTermError(
            f"integrand {h.name!r} non-finite on axis {f.axis} cell "
            f"]{f.lo[i]}, {f.hi[i]}] (tag {f.tag[i]})"
        )
    return vals


def riemann_sum(h: CellFunction, d: Division, workers: int = 1) -> float:
    """Compensated sum of h over the division's tagged cells.

    Tensor divisions of separable integrands are summed in factored form
    (identical value, per-axis compensated sums); anything else iterates
    items, which is refused above a size cap to avoid runaway enumeration.
    """
    if isinstance(d, AxisDivision):
        return _fsum_chunked(_axis_terms(h, d.axis1d), workers)

    if isinstance(d, TensorDivision) and h.factors is not None:
        axes = set(d.axes)
        if set(h.factors) == axes:
            prod = 1.0
            for a in d.axes:
                prod *= _fsum_chunked(
                    _axis_terms(h.factors[a], d.factors[a]), workers
                )
            return prod

    if d.size > ITERATE_CAP:
        raise TooManyTermsError(
            f"division has {d.size} cells and the integrand is not "
            f"separable; refusing to iterate (cap {ITERATE_CAP})"
        )
    terms = []
    for idx, t in enumerate(d.items()):
        v = h.evaluate(t.tag, t.cell)
        if not math.isfinite(v):
            raise NonFiniteTermError(
                f"integrand {h.name!r} non-finite on item {idx}: "
                f"{t.to_json()}"
            )
        terms.append(v)
    return _fsum_chunked(terms, workers)


class TooManyTermsError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# The convergence loop
# ---------------------------------------------------------------------------


def integrate(
    h: CellFunction,
    domain: DomainSpec,
    schedule: GaugeSchedule,
    tol: float,
    max_depth: int = 32,
    workers: int = 1,
) -> IntegralResult:
    """Refine the gauge until successive Riemann sums agree within tol.

    Returns converged=False (never a silently-converged value) when
    max_depth rounds do not reach agreement.
    """
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    rounds = []
    prev: Optional[float] = None
    estimate = math.nan
    size = 0
    for r in range(max_depth):
        g = schedule.at(r)
        d = construct_division(
            g, domain, depth_limit=schedule.depth_limit,
            max_cells=schedule.max_cells,
        )
        estimate = riemann_sum(h, d, workers=workers)
        size = d.size
        diff = math.inf if prev is None else abs(estimate - prev)
        rounds.append((r, size, estimate, None if prev is None else diff))
        if prev is not None and diff < tol:
            return IntegralResult(
                estimate=estimate,
                tolerance_achieved=diff,
                refinement_depth=r + 1,
                division_size=size,
                converged=True,
                rounds=tuple(rounds),
            )
        prev = estimate
    last_diff = rounds[-1][3] if len(rounds) > 1 else math.inf
    return IntegralResult(
        estimate=estimate,
        tolerance_achieved=math.inf if last_diff is None else last_diff,
        refinement_depth=max_depth,
        division_size=size,
        converged=False,
        rounds=tuple(rounds),
    )


def default_gauge1d(base: Cell1D) -> Gauge1D:
    width = base.length / 4 if base.bounded else 0.5
    return gauge1d_const(min(width, 0.5), inf_rule=2.0)


def schedule_for(
    h: CellFunction, domain: DomainSpec, tol: float, **kwargs
) -> GaugeSchedule:
    """Starting schedule: per-axis suggested gauges, componentwise."""
    axes = domain.axes()
    comps = {}
    for a in axes:
        base = domain.resolve(a)
        fac = h.factors.get(a) if h.factors else None
        factory = (fac or h).gauge_factory
        comps[a] = factory(base, tol) if factory else default_gauge1d(base)
    if len(axes) == 1:
        return GaugeSchedule(comps[axes[0]], **kwargs)
    return GaugeSchedule(GaugeB(comps), **kwargs)


def integrate_auto(
    h: CellFunction,
    domain: DomainSpec,
    tol: float,
    max_depth: int = 32,
    workers: int = 1,
    **schedule_kwargs,
) -> IntegralResult:
    schedule = schedule_for(h, domain, tol, **schedule_kwargs)
    return integrate(h, domain, schedule, tol, max_depth, workers)


def fubini_product(
    h1: CellFunction,
    h2: CellFunction,
    domain: DomainSpec,
    tol: float,
    max_depth: int = 32,
) -> tuple[float, float]:
    """Iterated vs direct integral of a separable two-axis integrand.

    Returns (iterated, direct): the product of the two one-dimensional
    integrals, and the two-dimensional integral of the product cell function.
    Either integral failing to converge raises.
    """
    axes = domain.axes()
    if len(axes) != 2:
        raise ValueError("fubini_product needs a two-axis product domain")
    a1, a2 = axes
    one_d = []
    for a, hf in ((a1, h1), (a2, h2)):
        sub = line_domain(a, domain.resolve(a))
        res = integrate_auto(_relabel(hf, a), sub, tol, max_depth)
        if not res.converged:
            raise RuntimeError(f"1D factor on axis {a} did not converge")
        one_d.append(res.estimate)
    iterated = one_d[0] * one_d[1]

    joint = separable_product({a1: h1, a2: h2})
    res2 = integrate_auto(joint, domain, tol, max_depth)
    if not res2.converged:
        raise RuntimeError("2D direct integral did not converge")
    return iterated, res2.estimate


def _relabel(h: CellFunction, axis: AxisLabel) -> CellFunction:
    """Bind a one-axis integrand to a concrete axis label for evaluation."""

    def evaluate(tag: PointT, cell: Cell, _h=h, _a=axis) -> float:
        return _h.evaluate(tag, cell)

    return CellFunction(
        name=h.name,
        evaluate=evaluate,
        kind=h.kind,
        params=h.params,
        axis_eval=h.axis_eval,
        gauge_factory=h.gauge_factory,
    )


def separable_product(factors: Mapping[AxisLabel, CellFunction]) -> CellFunction:
    factors = dict(factors)

    def evaluate(tag: PointT, cell: Cell) -> float:
        out = 1.0
        for a, h in factors.items():
            sub_cell = BoxCell({a: cell.edges[a]})
            out *= h.evaluate(PointT({a: tag.value(a)}), sub_cell)
        return out

    return CellFunction(
        name="*".join(h.name for h in factors.values()),
        evaluate=evaluate,
        kind="separable",
        factors=factors,
    )


# ---------------------------------------------------------------------------
# Integrand registry
# ---------------------------------------------------------------------------

_REGISTRY: dict[str, Callable[[dict], CellFunction]] = {}


def register_integrand(name: str):
    def deco(factory):
        _REGISTRY[name] = factory
        return factory

    return deco


def build_integrand(spec: Mapping) -> CellFunction:
    name = spec["name"]
    if name not in _REGISTRY:
        raise KeyError(
            f"unknown integrand {name!r}; known: {sorted(_REGISTRY)}"
        )
    return _REGISTRY[name](dict(spec.get("params", {})))


def _single_edge(cell: Cell) -> Cell1D:
    (edge,) = cell.edges.values()
    return edge


def _single_tag(tag: PointT, cell: Cell) -> float:
    (axis,) = cell.edges.keys()
    return tag.value(axis)


@register_integrand("length")
def _length_integrand(params: dict) -> CellFunction:
    """Product of restricted edge lengths (exactly additive)."""

    def evaluate(tag: PointT, cell: Cell) -> float:
        v = 1.0
        for e in cell.edges.values():
            v *= e.length
        return v

    return CellFunction(
        name="length",
        evaluate=evaluate,
        kind="distribution",
        params=params,
        axis_eval=lambda lo, hi, tag: hi - lo,
    )


@register_integrand("poly")
def _poly_integrand(params: dict) -> CellFunction:
    """f(x) * |I| with f a polynomial given by its coefficient list."""
    coeffs = list(params.get("coeffs", [0.0, 1.0]))

    def f(x):
        out = 0.0
        for c in reversed(coeffs):
            out = out * x + c
        return out

    return CellFunction(
        name="poly",
        evaluate=lambda tag, cell: f(_single_tag(tag, cell))
        * _single_edge(cell).length,
        kind="point_times_length",
        params={"coeffs": coeffs},
        axis_eval=lambda lo, hi, tag: f(tag) * (hi - lo),
    )


@register_integrand("dirichlet")
def _dirichlet_integrand(params: dict) -> CellFunction:
    """Indicator of a designated countable set, times length.

    The set is the (finite, denominator-bounded) float image of the rationals
    in [0, 1]; exact arithmetic has no such bound, but floats cannot represent
    the full countable set with distinguishable gauges. Its integral is
    forced to zero by gauges that decay along the enumeration.
    """
    dmax = int(params.get("dmax", 16))
    table = farey_table(dmax)

    def evaluate(tag, cell):
        x = _single_tag(tag, cell)
        return _single_edge(cell).length if x in table else 0.0

    def factory(base: Cell1D, tol: float) -> Gauge1D:
        delta, _ = build_delta(
            {"form": "rank_decay", "eps": tol / 4.0, "dmax": dmax, "base": 0.3}
        )
        return Gauge1D(delta=delta)

    def axis_eval(lo, hi, tag):
        ind = np.asarray([1.0 if float(t) in table else 0.0 for t in tag])
        return ind * (hi - lo)

    return CellFunction(
        name="dirichlet",
        evaluate=evaluate,
        kind="point_times_length",
        params={"dmax": dmax},
        axis_eval=axis_eval,
        gauge_factory=factory,
    )


@register_integrand("inv_sqrt")
def _inv_sqrt_integrand(params: dict) -> CellFunction:
    """f(x) = 1/(2 sqrt(x)) on ]0, 1], unbounded at 0; f(0) := 0.

    The suggested gauge shrinks linearly toward the singular point so the
    cells accumulate there; the single cell tagged at 0 contributes nothing
    and carries mass O(sqrt(delta(0))).
    """

    def evaluate(tag, cell):
        x = _single_tag(tag, cell)
        edge = _single_edge(cell)
        return 0.0 if x <= 0 else edge.length / (2.0 * math.sqrt(x))

    def axis_eval(lo, hi, tag):
        out = np.zeros_like(tag)
        pos = tag > 0
        out[pos] = (hi[pos] - lo[pos]) / (2.0 * np.sqrt(tag[pos]))
        return out

    def factory(base: Cell1D, tol: float) -> Gauge1D:
        floor = tol * tol / 16.0

        def delta(y, _f=floor):
            if math.isinf(y):
                return _f
            return max(y / 4.0, _f)

        return Gauge1D(delta=delta)

    return CellFunction(
        name="inv_sqrt",
        evaluate=evaluate,
        kind="point_times_length",
        axis_eval=axis_eval,
        gauge_factory=factory,
    )


def _phi_mass(lo, hi, sigma):
    rt = sigma * math.sqrt(2.0)
    return 0.5 * (math.erf(hi / rt) - math.erf(lo / rt))


@register_integrand("gauss_mass")
def _gauss_mass_integrand(params: dict) -> CellFunction:
    """Centered Gaussian mass of the cell, optionally cut by an indicator
    1{tag <= barrier} (a distribution-function Stieltjes integrand)."""
    t = float(params.get("t", 1.0))
    barrier = params.get("barrier")
    sigma = math.sqrt(t)

    def evaluate(tag, cell):
        edge = _single_edge(cell)
        m = _phi_mass(edge.lo, edge.hi, sigma)
        if barrier is not None and _single_tag(tag, cell) > barrier:
            return 0.0
        return m

    def axis_eval(lo, hi, tag):
        rt = sigma * math.sqrt(2.0)
        with np.errstate(invalid="ignore"):
            m = 0.5 * (_erf_arr(hi / rt) - _erf_arr(lo / rt))
        if barrier is not None:
            m = np.where(tag <= barrier, m, 0.0)
        return m

    return CellFunction(
        name="gauss_mass",
        evaluate=evaluate,
        kind="distribution",
        params={"t": t, "barrier": barrier},
        axis_eval=axis_eval,
        gauge_factory=lambda base, tol: gauge1d_const(0.25, inf_rule=2.0),
    )


def _erf_arr(x: np.ndarray) -> np.ndarray:
    from scipy.special import erf

    return erf(np.nan_to_num(x, nan=0.0, posinf=38.0, neginf=-38.0))


@register_integrand("separable")
def _separable_integrand(params: dict) -> CellFunction:
    factors = {
        a: build_integrand(spec) for a, spec in params["factors"].items()
    }
    return separable_product(factors)
