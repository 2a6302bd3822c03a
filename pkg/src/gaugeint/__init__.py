"""Gauge-fine divisions and Riemann-sum integration on product domains."""

from .cells import (
    AxisLabel,
    BoxCell,
    Cell1D,
    CylinderCell,
    CylinderSpec,
    DomainMismatchError,
    DomainSpec,
    FULL_LINE,
    InvalidSplitError,
    LeafSpec,
    PointT,
    ProductSpec,
    TaggedCell,
    associated,
    box_domain,
    cell_membership,
    line_domain,
    product_sequence_domain,
    sequence_domain,
    split_cell,
)
from .gauges import (
    AssociationError,
    CompoundGauge,
    CylinderGauge,
    Gauge1D,
    GaugeA,
    GaugeB,
    GaugeCylinder,
    GaugeLeaf,
    GaugeProduct,
    build_gauge,
    find_b_not_a,
    gauge1d_const,
    is_fine,
    min_combine,
    scale_gauge,
)
from .division import (
    AxisDivision,
    BinaryCellScheme,
    ConstructionUnsupportedError,
    DepthLimitError,
    Division,
    DivisionCertificate,
    DivisionConstructionError,
    ListDivision,
    TensorDivision,
    construct_division,
    cousin_1d,
    cousin_box,
    cousin_cylinder,
    slice_division,
    validate,
)
from .integrate import (
    CellFunction,
    GaugeSchedule,
    IntegralResult,
    NonFiniteTermError,
    build_integrand,
    fubini_product,
    integrate,
    integrate_auto,
    riemann_sum,
    schedule_for,
    separable_product,
)
from .brownian import (
    BrownianCell,
    BrownianSpec,
    PayoffSpec,
    G,
    chain_mass,
    expected_payoff,
    mc_oracle,
    payoff,
)

__version__ = "0.1.0"
