"""Sheaf diffusion on graphs: operators, opinion-dynamics integrators, sheaf neural
network layers and a synthetic heterophily benchmark."""

from .graph import ClassLabels, Graph, connected_components, edge_homophily, graph_laplacian, ring_lattice
from .sheaf import (
    CellularSheaf,
    coboundary_apply,
    coboundary_transpose,
    degree_normalized_laplacian_apply,
    dirichlet_energy,
    dual_laplacian_apply,
    harmonic_projection,
    identity_sheaf,
    sheaf_from_stack,
    sheaf_laplacian_apply,
    sheaf_laplacian_dense,
    to_restriction_stack,
)

__version__ = "0.1.0"
