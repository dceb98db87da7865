"""Fixed classifier prototypes on the vertices of a regular simplex.

The classifier weight matrix used for global feature stationarity is the set
of vertices of a regular simplex: ``n`` maximally separated vectors living in
``n - 1`` dimensions, one row per class slot (already seen classes and slots
reserved for future ones). The matrix is built once in closed form, is never
trained, and is shared by every model in a training sequence.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class SimplexPrototypes:
    """Immutable prototype matrix: one row per class slot.

    ``vertices`` has shape ``(num_vertices, dim)`` with ``dim == num_vertices - 1``
    and is marked read-only; trainers must never modify it.
    """

    num_vertices: int
    dim: int
    vertices: np.ndarray
    alpha: float
    centered: bool = False

    def row(self, class_id: int) -> np.ndarray:
        """Prototype vector for one class slot."""
        return self.vertices[class_id]

    def checksum_bytes(self) -> bytes:
        return self.vertices.tobytes()


def build_simplex(total_classes: int, centered: bool = False) -> SimplexPrototypes:
    """Construct the prototype matrix for ``total_classes`` class slots.

    The vertices are the ``n - 1`` standard basis vectors plus the constant
    vector ``alpha * (1, ..., 1)`` with ``alpha = (1 - sqrt(n)) / (n - 1)``.
    This makes every pairwise vertex distance equal to sqrt(2), the regularity
    property the training objective relies on.

    With ``centered=True`` the vertex mean is subtracted and each vertex is
    rescaled to unit norm. Pairwise distances then stay equal to each other
    but are no longer sqrt(2). Off by default; provided for experimentation.
    """
    n = int(total_classes)
    if n < 2:
        raise ConfigError(f"classifier capacity must be at least 2, got {total_classes}")
    dim = n - 1
    alpha = (1.0 - math.sqrt(n)) / (n - 1.0)
    vertices = np.zeros((n, dim), dtype=np.float64)
    vertices[:dim, :] = np.eye(dim, dtype=np.float64)
    vertices[dim, :] = alpha
    if centered:
        vertices -= vertices.mean(axis=0, keepdims=True)
        vertices /= np.linalg.norm(vertices, axis=1, keepdims=True)
    vertices.setflags(write=False)
    return SimplexPrototypes(
        num_vertices=n, dim=dim, vertices=vertices, alpha=alpha, centered=centered
    )
