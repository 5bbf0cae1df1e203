"""Input-affine plant models dx/dt = f(x) + G u with structured input matrices.

The controller design in this package requires the constant input matrix G
to have exactly n-m identically-zero rows.  The indices of those rows define
the unactuated coordinates x_u; the remaining m rows form the invertible
actuated block G2 and define the measured coordinates x_a.  The zero rows may
sit anywhere: a shuffled G is handled by the same machinery, with G2 taken as
the submatrix of actuated rows in ascending index order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import null_space

from .errors import DimensionError, NotAssignableError, StructuralError

__all__ = [
    "Dimensions",
    "InputMatrix",
    "PlantModel",
    "PartitionedState",
    "EquilibriumPair",
    "NormalizationResult",
    "input_matrix",
    "normalize_input_matrix",
    "partition_state",
    "assemble_state",
    "left_annihilator",
    "assignable_residual",
    "solve_ustar",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dimensions:
    """State and input dimensions, n > m >= 1."""

    n: int
    m: int

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and isinstance(self.m, (int, np.integer))):
            raise StructuralError("dimensions must be integers")
        if not self.n > self.m >= 1:
            raise StructuralError(f"need n > m >= 1, got n={self.n}, m={self.m}")


@dataclass(frozen=True)
class InputMatrix:
    """Constant n x m input matrix with exactly n-m identically-zero rows.

    ``zero_rows`` and ``actuated_rows`` are 0-based ascending index tuples;
    ``G2`` is the m x m submatrix of the actuated rows.
    """

    entries: np.ndarray
    zero_rows: tuple[int, ...]
    actuated_rows: tuple[int, ...]
    G2: np.ndarray

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def m(self) -> int:
        return self.entries.shape[1]


def input_matrix(G: np.ndarray) -> InputMatrix:
    """Validate and wrap G.  The zero-row pattern is structural: rows must be
    exactly zero in the stored matrix, not merely small."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    n, m = G.shape
    Dimensions(n, m)
    zero = tuple(i for i in range(n) if not G[i].any())
    act = tuple(i for i in range(n) if G[i].any())
    if len(zero) != n - m:
        raise StructuralError(
            f"input matrix must have exactly {n - m} zero rows, found {len(zero)}"
        )
    G2 = G[list(act), :]
    if np.linalg.matrix_rank(G) < m:
        raise StructuralError("input matrix not full rank")
    if abs(np.linalg.det(G2)) < np.finfo(float).eps * max(1.0, np.abs(G2).max()) * m:
        raise StructuralError("actuated block G2 is singular")
    return InputMatrix(_readonly(G), zero, act, _readonly(G2))


@dataclass(frozen=True)
class PlantModel:
    """Plant dx/dt = f(x) + G u.

    ``field_f`` maps an n-vector to an n-vector.  It must be deterministic and
    side-effect free; it should broadcast over leading axes (inputs of shape
    (..., n)), which every field built by this package does.
    """

    dims: Dimensions
    field_f: Callable[[np.ndarray], np.ndarray]
    input_matrix: InputMatrix

    def __post_init__(self):
        if self.input_matrix.n != self.dims.n or self.input_matrix.m != self.dims.m:
            raise DimensionError("input matrix shape does not match declared dimensions")

    def f(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dims.n:
            raise DimensionError(f"state must have length {self.dims.n}")
        return np.asarray(self.field_f(x), dtype=float)

    def f_many(self, X: np.ndarray) -> np.ndarray:
        """Evaluate the drift on a stack of states, shape (K, n) -> (K, n).

        Tries one vectorized call and falls back to a row loop for fields
        that do not broadcast.
        """
        X = np.asarray(X, dtype=float)
        try:
            out = np.asarray(self.field_f(X), dtype=float)
            if out.shape == X.shape:
                return out
        except Exception:
            pass
        return np.stack([self.f(row) for row in X])


@dataclass(frozen=True)
class PartitionedState:
    """State split into unactuated and actuated parts.

    ``order`` is the permutation with concat(x_u, x_a)[i] == x[order[i]].
    """

    x_u: np.ndarray
    x_a: np.ndarray
    order: tuple[int, ...]


@dataclass(frozen=True)
class EquilibriumPair:
    """A state/input pair with ||f(x*) + G u*|| below the declared tolerance."""

    x_star: np.ndarray
    u_star: np.ndarray
    tolerance: float = 1e-8


@dataclass(frozen=True)
class NormalizationResult:
    """Outcome of bringing G to the stacked form [0; I_m] via T G S."""

    T: np.ndarray
    S: np.ndarray
    normalized: InputMatrix
    structure_destroying: bool


def normalize_input_matrix(G: np.ndarray) -> NormalizationResult:
    """Find invertible T (n x n) and S (m x m) with T G S = [0_(n-m) x m; I_m].

    When G already has n-m exact zero rows, T is the permutation that moves
    them on top (preserving relative order) and S = G2^{-1}.  Otherwise T is
    built by Gauss-Jordan elimination with partial pivoting and the result is
    flagged ``structure_destroying``: the state change z = T x scrambles
    coordinates, which in general breaks the separable-storage structure the
    controller relies on.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    n, m = G.shape
    Dimensions(n, m)
    if np.linalg.matrix_rank(G) < m:
        raise StructuralError("input matrix not full rank")

    zero = [i for i in range(n) if not G[i].any()]
    if len(zero) == n - m:
        im = input_matrix(G)
        perm = list(im.zero_rows) + list(im.actuated_rows)
        T = np.zeros((n, n))
        for pos, src in enumerate(perm):
            T[pos, src] = 1.0
        S = np.linalg.inv(im.G2)
    else:
        # Gauss-Jordan: per column pick the bottom-most largest pivot among
        # unused rows, clear the column from every other row.
        A = G.copy()
        T = np.eye(n)
        available = list(range(n))
        pivots: list[int] = []
        for j in range(m):
            cand = max(available, key=lambda i: (abs(A[i, j]), i))
            if abs(A[cand, j]) <= 1e-12 * max(1.0, np.abs(G).max()):
                raise StructuralError("input matrix not full rank")
            for i in range(n):
                if i != cand and A[i, j] != 0.0:
                    factor = A[i, j] / A[cand, j]
                    A[i, :] -= factor * A[cand, :]
                    T[i, :] -= factor * T[cand, :]
            available.remove(cand)
            pivots.append(cand)
        nonpivot = sorted(set(range(n)) - set(pivots))
        perm = nonpivot + pivots
        P = np.zeros((n, n))
        for pos, src in enumerate(perm):
            P[pos, src] = 1.0
        T = P @ T
        S = np.diag([1.0 / A[pivots[j], j] for j in range(m)])

    TGS = T @ G @ S
    target = np.vstack([np.zeros((n - m, m)), np.eye(m)])
    if np.abs(TGS - target).max() > 1e-12 * max(1.0, np.abs(G).max()):
        raise StructuralError("normalization failed to reach the stacked form")
    return NormalizationResult(
        _readonly(T), _readonly(S), input_matrix(target),
        structure_destroying=(len(zero) != n - m),
    )


def partition_state(x: np.ndarray, im: InputMatrix) -> PartitionedState:
    """Split x into (x_u, x_a) along the zero/actuated rows of G."""
    x = np.asarray(x, dtype=float)
    if x.shape != (im.n,):
        raise DimensionError(f"state must have length {im.n}, got shape {x.shape}")
    order = im.zero_rows + im.actuated_rows
    return PartitionedState(x[list(im.zero_rows)], x[list(im.actuated_rows)], order)


def assemble_state(part: PartitionedState) -> np.ndarray:
    """Inverse of :func:`partition_state`."""
    n = len(part.order)
    x = np.empty(n)
    x[list(part.order)] = np.concatenate([part.x_u, part.x_a])
    return x


def left_annihilator(G) -> np.ndarray:
    """Full-rank (n-m) x n matrix with result @ G = 0.

    For a structured :class:`InputMatrix` (or a raw matrix that has n-m exact
    zero rows) the annihilator is the selector of the unactuated rows.  For a
    general full-rank matrix the orthonormal left null space is returned.
    """
    if isinstance(G, InputMatrix):
        im = G
        A = np.zeros((im.n - im.m, im.n))
        for k, i in enumerate(im.zero_rows):
            A[k, i] = 1.0
        return A
    G = np.atleast_2d(np.asarray(G, dtype=float))
    n, m = G.shape
    zero = [i for i in range(n) if not G[i].any()]
    if len(zero) == n - m:
        return left_annihilator(input_matrix(G))
    if np.linalg.matrix_rank(G) < m:
        raise StructuralError("input matrix not full rank")
    return null_space(G.T).T


def assignable_residual(plant: PlantModel, x: np.ndarray) -> np.ndarray:
    """Unactuated residual G_perp f(x); zero exactly on assignable equilibria."""
    fx = plant.f(x)
    return fx[..., list(plant.input_matrix.zero_rows)]


def solve_ustar(plant: PlantModel, x_star: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Constant input assigning x_star: u* = -G2^{-1} f_a(x*).

    The sign is fixed by the equilibrium condition f(x*) + G u* = 0.
    Raises :class:`NotAssignableError` when the unactuated residual exceeds
    ``tol``, since no constant input can cancel it.
    """
    x_star = np.asarray(x_star, dtype=float)
    resid = assignable_residual(plant, x_star)
    rnorm = float(np.linalg.norm(resid))
    if rnorm > tol:
        raise NotAssignableError(rnorm)
    im = plant.input_matrix
    f_a = plant.f(x_star)[list(im.actuated_rows)]
    return -np.linalg.solve(im.G2, f_a)
