"""Estimate and certify Hölder metric regularity of finite-dimensional set-valued maps."""
from .geometry import INF, Polyhedron, dual_product_norm, excess, product_distance, project_polyhedron
from .mappings import (
    EvalRegion,
    LinearMap,
    NormalConeOfBox,
    PolyhedralGraph,
    SampledGraph,
    Smooth,
    ZeroMap,
    graph_sample,
    image_distance,
    inverse,
    preimage_distance,
    sum_with_function,
)
from .moduli import ModulusQuery, estimate_lip_q, estimate_lip_q_function, estimate_rg_q

__version__ = "0.1.0"
