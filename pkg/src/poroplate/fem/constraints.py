"""Constraint handling by exact elimination.

Dirichlet dofs are removed, periodic slave dofs are identified with their
masters, and mean-zero functionals are carried along for the solver (realized
by projection, which for compatible right-hand sides yields the same solution
as a single Lagrange multiplier while keeping the operator SPD for CG).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import ConstraintError


@dataclass
class ConstraintSet:
    """Dirichlet values, periodic master/slave pairs, optional mean-zero blocks."""

    ndof: int
    dirichlet_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    dirichlet_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    periodic_slaves: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    periodic_masters: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    # each mean-zero block: (weights over full dofs, indicator of the dof block)
    mean_zero: list = field(default_factory=list)

    def __post_init__(self):
        self.dirichlet_dofs = np.asarray(self.dirichlet_dofs, dtype=np.int64)
        self.dirichlet_values = np.asarray(self.dirichlet_values, dtype=float)
        if len(self.dirichlet_values) == 0 and len(self.dirichlet_dofs):
            self.dirichlet_values = np.zeros(len(self.dirichlet_dofs))
        if len(self.dirichlet_dofs) != len(self.dirichlet_values):
            raise ConstraintError("dirichlet dofs/values length mismatch")
        uniq, counts = np.unique(self.dirichlet_dofs, return_counts=True)
        if np.any(counts > 1):
            # duplicates are fine only when the prescribed values agree
            for d in uniq[counts > 1]:
                vals = self.dirichlet_values[self.dirichlet_dofs == d]
                if np.ptp(vals) > 0.0:
                    raise ConstraintError(f"dof {d} has inconsistent Dirichlet values {sorted(set(vals))}")
        self.periodic_slaves = np.asarray(self.periodic_slaves, dtype=np.int64)
        self.periodic_masters = np.asarray(self.periodic_masters, dtype=np.int64)
        dir_set = set(self.dirichlet_dofs.tolist())
        if dir_set.intersection(self.periodic_slaves.tolist()):
            raise ConstraintError("a dof appears both as Dirichlet and as periodic slave")


class Reducer:
    """Affine map full = P @ reduced + g realizing a ConstraintSet exactly."""

    def __init__(self, cons: ConstraintSet):
        n = cons.ndof
        root = np.arange(n, dtype=np.int64)
        root[cons.periodic_slaves] = cons.periodic_masters
        # path-compress master chains; bounded depth, else the graph has a cycle
        for _ in range(64):
            nxt = root[root]
            if np.array_equal(nxt, root):
                break
            root = nxt
        else:
            raise ConstraintError("periodic constraint graph has a cycle")
        if np.any(root[cons.periodic_slaves] == cons.periodic_slaves):
            raise ConstraintError("periodic slave maps to itself")

        is_slave = np.zeros(n, dtype=bool)
        is_slave[cons.periodic_slaves] = True
        is_dir = np.zeros(n, dtype=bool)
        is_dir[cons.dirichlet_dofs] = True
        if np.any(is_dir[root[cons.periodic_slaves]]):
            raise ConstraintError("periodic slave resolves to a Dirichlet master")

        free = np.flatnonzero(~(is_slave | is_dir))
        red_of = np.full(n, -1, dtype=np.int64)
        red_of[free] = np.arange(len(free))
        self.n_full = n
        self.n_reduced = len(free)
        self.free = free
        self.root = root
        self.g = np.zeros(n)
        self.g[cons.dirichlet_dofs] = cons.dirichlet_values
        rows = np.arange(n)[~is_dir]
        cols = red_of[root[rows]]
        if np.any(cols < 0):
            raise ConstraintError("periodic master resolves to an eliminated dof")
        self.P = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, self.n_reduced))
        self.has_lift = bool(np.any(self.g))
        # mean-zero data in reduced coordinates: (weights, shift direction, measure)
        self.mean_zero = []
        for w_full, block_full in cons.mean_zero:
            w_red = self.P.T @ np.asarray(w_full, dtype=float)
            block = np.asarray(block_full, dtype=float)
            c_red = block[self.free]  # constant-1 field on the block, reduced
            measure = float(np.asarray(w_full) @ block)
            self.mean_zero.append((w_red, c_red, measure))

    def reduce_matrix(self, A: sp.spmatrix) -> sp.csr_matrix:
        return (self.P.T @ A @ self.P).tocsr()

    def reduce_rhs(self, b: np.ndarray, A: sp.spmatrix | None = None) -> np.ndarray:
        if self.has_lift:
            if A is None:
                raise ConstraintError("nonzero Dirichlet values need the matrix to lift the rhs")
            b = b - A @ self.g
        return self.P.T @ b

    def expand(self, x_red: np.ndarray) -> np.ndarray:
        return self.P @ x_red + self.g

    def restrict(self, x_full: np.ndarray) -> np.ndarray:
        """Reduced coefficients of a full vector (reads free dofs)."""
        return x_full[self.free]
