"""Structured bilinear-quad FE mesh of the reference square [0,1]^2.

All modules are discretized on this mesh and mapped through their NURBS
geometry; keeping one node count per direction for every module makes
interface trace meshes conform by construction.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

EDGE_AXIS = {"south": 0, "north": 0, "west": 1, "east": 1}


@dataclass(frozen=True)
class Quadrature:
    """Volume quadrature bundle: everything assembly needs per Gauss point.

    points   (E*Q, 2) global reference coordinates, element-major
    weights  (Q,) local weights including the cell measure
    shape    (Q, 4) bilinear shape values
    grad     (Q, 4, 2) shape gradients w.r.t. the global reference coords
    """

    points: np.ndarray
    weights: np.ndarray
    shape: np.ndarray
    grad: np.ndarray
    n_gauss: int


@dataclass(frozen=True)
class EdgeQuadrature:
    """Boundary quadrature along one edge of the square.

    points    (S*G, 2) reference coordinates on the edge, segment-major
    s         (S*G,) arc coordinate along the edge in [0, 1]
    weights   (G,) local weights including the segment length (in s units)
    shape     (G, 2) linear shape values on a segment
    segments  (S, 2) node ids of each edge segment, ascending along the edge
    axis      index of the reference coordinate that varies along the edge
    """

    points: np.ndarray
    s: np.ndarray
    weights: np.ndarray
    shape: np.ndarray
    segments: np.ndarray
    axis: int


def gauss_01(order):
    """Gauss-Legendre points/weights on [0, 1]."""
    g, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (g + 1.0), 0.5 * w


class UnitSquareMesh:
    """n x n node structured mesh; node id = i + j * n."""

    def __init__(self, n):
        if n < 2:
            raise ValueError("need at least 2 nodes per direction")
        self.n = int(n)
        x = np.linspace(0.0, 1.0, self.n)
        X1, X2 = np.meshgrid(x, x, indexing="xy")
        self.nodes = np.column_stack([X1.ravel(), X2.ravel()])
        i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="xy")
        a = (i + j * n).ravel()
        self.quads = np.column_stack([a, a + 1, a + 1 + n, a + n])
        self.h = 1.0 / (self.n - 1)

    @property
    def n_nodes(self):
        return self.n * self.n

    @property
    def n_elements(self):
        return self.quads.shape[0]

    def edge_nodes(self, edge):
        """Node ids along an edge, ascending in the edge coordinate."""
        n = self.n
        idx = np.arange(n)
        if edge == "south":
            return idx
        if edge == "north":
            return idx + n * (n - 1)
        if edge == "west":
            return idx * n
        if edge == "east":
            return idx * n + (n - 1)
        raise ValueError(f"unknown edge {edge!r}")

    def boundary_nodes(self):
        return np.unique(np.concatenate([self.edge_nodes(e) for e in EDGE_AXIS]))

    def shape_values(self, xi):
        """Element node ids and bilinear shape values at one reference point."""
        xi = np.asarray(xi, dtype=float)
        cell = np.clip((xi / self.h).astype(int), 0, self.n - 2)
        u, v = (xi - cell * self.h) / self.h
        a = cell[0] + cell[1] * self.n
        ids = np.array([a, a + 1, a + 1 + self.n, a + self.n])
        vals = np.array([(1 - u) * (1 - v), u * (1 - v), u * v, (1 - u) * v])
        return ids, vals

    @lru_cache(maxsize=8)
    def quadrature(self, order=2):
        g, w = gauss_01(order)
        U, V = np.meshgrid(g, g, indexing="ij")
        u, v = U.ravel(), V.ravel()
        wq = np.outer(w, w).ravel() * self.h * self.h
        shape = np.column_stack([(1 - u) * (1 - v), u * (1 - v), u * v, (1 - u) * v])
        grad = np.empty((u.size, 4, 2))
        grad[:, :, 0] = np.column_stack([-(1 - v), (1 - v), v, -v]) / self.h
        grad[:, :, 1] = np.column_stack([-(1 - u), -u, u, (1 - u)]) / self.h
        # global coordinates, element-major
        corners = self.nodes[self.quads[:, 0]]
        local = np.column_stack([u, v]) * self.h
        pts = (corners[:, None, :] + local[None, :, :]).reshape(-1, 2)
        return Quadrature(pts, wq, shape, grad, u.size)

    @lru_cache(maxsize=16)
    def edge_quadrature(self, edge, order=3):
        g, w = gauss_01(order)
        nodes = self.edge_nodes(edge)
        segments = np.column_stack([nodes[:-1], nodes[1:]])
        axis = EDGE_AXIS[edge]
        starts = self.nodes[segments[:, 0], axis]
        s = (starts[:, None] + g[None, :] * self.h).ravel()
        pts = np.empty((s.size, 2))
        pts[:, axis] = s
        pts[:, 1 - axis] = self.nodes[nodes[0], 1 - axis]
        shape = np.column_stack([1 - g, g])
        return EdgeQuadrature(pts, s, w * self.h, shape, segments, axis)
