from lte.autodiff.engine import (
    Graph,
    GraphStateError,
    ShapeError,
    Tensor,
    backward,
    precision,
)
from lte.autodiff.gradcheck import finite_difference_check

__all__ = [
    "Graph", "GraphStateError", "ShapeError", "Tensor", "backward", "precision",
    "finite_difference_check",
]
