"""Unfolding operators, the macroscopic Biot-Kirchhoff-Love solver, the direct
two-scale oracle, and the micro-to-limit convergence harness.

The macro solver is the exact corrector elimination of the unfolded limit
problem; the oracle discretizes that limit problem monolithically (macro
fields, per-quadrature-point cell warping, nodal-in-x two-scale pressure) and
never touches the corrector fields, so agreement between the two paths checks
the whole cell/homogenization pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from . import fem
from .cell import (
    HomogenizedTensor,
    MomentTable,
    PressureCellOperator,
    averaged_voigt,
    cell_constraints,
    corrector_rhs,
    MEMBRANE_KEYS,
    _ENG_UNIT,
)
from .errors import AssemblyError, BudgetError
from .fem import elements as el
from .fem.constraints import Reducer
from .fem.solvers import DenseFactor
from .geometry import GEL, CellMesh, MicroMesh, PlateMesh
from .material import BiotParams, HookeTensor, LoadSpec
from .plate import PlateSpace, build_plate_space, plate_mass, scatter_local, scatter_vector

# ------------------------------------------------------------------ unfolding


@dataclass
class UnfoldedField:
    """Field on (macro cell) x (cell-mesh nodes), produced by the unfolding map."""

    eps: float
    scale_exp: int
    data: np.ndarray          # (n_cells, n_cell_nodes) or (..., ncomp)
    cell_mesh: CellMesh

    @property
    def n_cells(self) -> int:
        return self.data.shape[0]


def _check_matched(micro: MicroMesh, cell: CellMesh):
    if micro.n != cell.n:
        raise AssemblyError(f"micro mesh (n={micro.n}) and cell mesh (n={cell.n}) are not matched")


def unfold(values: np.ndarray, micro: MicroMesh, cell: CellMesh, scale_exp: int = 0) -> UnfoldedField:
    """Nodal unfolding (Pi_eps psi)(k, y) = eps^-s psi(eps k + eps y) on matched grids."""
    _check_matched(micro, cell)
    values = np.asarray(values)
    if values.shape[0] != micro.n_nodes:
        raise AssemblyError("field must be nodal on the micro mesh")
    maps = np.stack([micro.cell_node_map(c) for c in range(micro.total_cells)])
    data = values[maps] * micro.eps ** (-scale_exp)
    return UnfoldedField(eps=micro.eps, scale_exp=scale_exp, data=data, cell_mesh=cell)


def unfold_pressure(p: np.ndarray, micro: MicroMesh, cell: CellMesh, scale_exp: int = 1) -> np.ndarray:
    """(n_cells, n_gel_cell) unfolded gel pressure; gel dofs are cell-major."""
    _check_matched(micro, cell)
    n = micro.n
    li, lj, lk = micro.gel_local_template.T
    template_ids = li + (n + 1) * (lj + (n + 1) * lk)
    if not np.array_equal(template_ids, cell.gel_nodes()):
        raise AssemblyError("micro gel template does not match the cell-mesh gel ordering")
    ng = micro.n_gel_local
    return p.reshape(micro.total_cells, ng) * micro.eps ** (-scale_exp)


def unfolded_l2(uf: UnfoldedField) -> float:
    """L2(omega x Ycell) norm: per-cell mass form weighted by the cell area eps^2."""
    M = fem.assemble_scalar_mass(uf.cell_mesh)
    data = uf.data if uf.data.ndim == 3 else uf.data[..., None]
    total = 0.0
    for k in range(uf.n_cells):
        for c in range(data.shape[2]):
            v = data[k, :, c]
            total += v @ (M @ v)
    return float(np.sqrt(max(total, 0.0)) * uf.eps)


def gradient_identity_error(values: np.ndarray, micro: MicroMesh, cell: CellMesh) -> float:
    """max over elements/qps of | grad_y(Pi psi) - eps Pi(grad psi) |."""
    _check_matched(micro, cell)
    uf = unfold(values, micro, cell, scale_exp=0)
    _, dN_cell, _, _ = el.hex_qp_data(cell.spacing)
    _, dN_micro, _, _ = el.hex_qp_data(micro.spacing)
    err = 0.0
    conn_cell = cell.elems
    for k in range(micro.total_cells):
        emap = micro.cell_elem_map(k)
        nodal_cell = uf.data[k][conn_cell]                      # (ne, 8)
        g_y = np.einsum("qai,ea->eqi", dN_cell, nodal_cell)
        nodal_micro = values[micro.elems[emap]]
        g_x = np.einsum("qai,ea->eqi", dN_micro, nodal_micro)
        err = max(err, float(np.abs(g_y - micro.eps * g_x).max()))
    return err


def isometry_error(values: np.ndarray, micro: MicroMesh, cell: CellMesh) -> float:
    """Relative defect of ||Pi psi||^2_{omega x Ycell} = (1/eps) ||psi||^2_{Omega_eps}."""
    uf = unfold(values, micro, cell, scale_exp=0)
    lhs = unfolded_l2(uf) ** 2
    M3 = fem.assemble_scalar_mass(micro)
    rhs = float(values @ (M3 @ values)) / micro.eps
    return abs(lhs - rhs) / max(abs(rhs), 1e-300)


# ------------------------------------------------------- cell-mesh sampling


class CellSampler:
    """Values/strains/divergence of cell-mesh nodal fields at element qps."""

    def __init__(self, mesh: CellMesh):
        self.mesh = mesh
        self.N, self.dN, self.wdet, self.pts = el.hex_qp_data(mesh.spacing)
        self.B = el.hex_strain_B(self.dN)
        self.conn = mesh.elems
        self.vdofs = fem.vector_dofs(mesh.elems)
        z0 = mesh.nodes[mesh.elems[:, 0], 2]
        self.z_q = z0[:, None] + (self.pts[None, :, 2] + 1.0) * 0.5 * mesh.spacing[2]
        self.y_q = np.stack([
            mesh.nodes[mesh.elems[:, 0], i][:, None]
            + (self.pts[None, :, i] + 1.0) * 0.5 * mesh.spacing[i]
            for i in range(3)
        ], axis=-1)  # (ne, nq, 3)
        self.gel_elems = np.flatnonzero(mesh.phase == GEL)

    def values(self, nodal: np.ndarray) -> np.ndarray:
        """(ne, nq, k) values of a (n_nodes, k) nodal field."""
        return np.einsum("qa,ea...->eq...", self.N, nodal[self.conn])

    def strains(self, nodal_vec: np.ndarray) -> np.ndarray:
        """(ne, nq, 6) engineering strains of a (n_nodes, 3) field."""
        flat = nodal_vec.reshape(-1)[self.vdofs]
        return np.einsum("qiA,eA->eqi", self.B, flat)

    def scalar_values_gel(self, nodal_gel: np.ndarray, gel_dof_of_node: np.ndarray) -> np.ndarray:
        """(n_gel_elems, nq) values of a gel nodal field at gel-element qps."""
        conn = self.conn[self.gel_elems]
        vals = nodal_gel[gel_dof_of_node[conn]]
        return np.einsum("qa,ea->eq", self.N, vals)


def eng_to_full(strain_eng: np.ndarray) -> np.ndarray:
    """(..., 6) engineering strain to (..., 3, 3) symmetric tensors."""
    e = strain_eng
    out = np.zeros(e.shape[:-1] + (3, 3))
    out[..., 0, 0] = e[..., 0]
    out[..., 1, 1] = e[..., 1]
    out[..., 2, 2] = e[..., 2]
    out[..., 1, 2] = out[..., 2, 1] = 0.5 * e[..., 3]
    out[..., 0, 2] = out[..., 2, 0] = 0.5 * e[..., 4]
    out[..., 0, 1] = out[..., 1, 0] = 0.5 * e[..., 5]
    return out


# ------------------------------------------------------------- macro system


@dataclass
class MacroState:
    """Kirchhoff-Love fields and the per-macro-node two-scale gel pressure."""

    t: float
    Wm: np.ndarray          # (nn, 2) membrane displacement
    Wb: np.ndarray          # (nn, 4) BFS dofs of W3 (value, d1, d2, d12)
    p: np.ndarray           # (nn, n_gel) two-scale pressure p0
    W_red: np.ndarray = None

    @property
    def W3(self) -> np.ndarray:
        return self.Wb[:, 0]

    def p_mean(self, w_gel: np.ndarray, cell_volume: float) -> np.ndarray:
        """p_m(x') = (1/|Ycell|) int_gel p0 dy per macro node."""
        return (self.p @ w_gel) / cell_volume


class MacroSystem:
    """Assembled homogenized plate/pressure system with cached step factors."""

    def __init__(self, hom: HomogenizedTensor, op: PressureCellOperator,
                 moments: MomentTable, plate: PlateMesh, biot: BiotParams,
                 loads: LoadSpec | None = None):
        if hom.min_eigenvalue() <= 1e-10:
            raise AssemblyError("homogenized tensor is not positive definite")
        self.hom = hom
        self.op = op
        self.biot = biot
        self.loads = loads if loads is not None else LoadSpec()
        self.space = build_plate_space(plate)
        self.vol = op.cell_volume
        self.ng = op.n_gel
        sp_ = self.space

        # plate stiffness from the homogenized coefficients
        a, b, c = hom.a_eng, hom.b_eng, hom.c_eng
        loc = np.zeros((24, 24))
        for q in range(len(sp_.qp_w)):
            Bm, Bb, w = sp_.B_mem[q], sp_.B_bend[q], sp_.qp_w[q]
            loc[:8, :8] += w * Bm.T @ a @ Bm
            loc[:8, 8:] += -w * Bm.T @ b.T @ Bb
            loc[8:, :8] += -w * Bb.T @ b @ Bm
            loc[8:, 8:] += w * Bb.T @ c @ Bb
        self.A_W = np.zeros((sp_.n_red, sp_.n_red))
        scatter_local(self.A_W, sp_.elem_dofs,
                      np.broadcast_to(loc, (len(sp_.elem_dofs), 24, 24)))

        # coupling vectors c_m, c_b on gel dofs (divergence moments + traces)
        alpha = biot.alpha
        self.cm = np.stack([moments.vec("m", *k) + (op.w if k[0] == k[1] else 0.0)
                            for k in MEMBRANE_KEYS])
        self.cb = np.stack([moments.vec("b", *k) + (op.w3 if k[0] == k[1] else 0.0)
                            for k in MEMBRANE_KEYS])
        # Gamma[(i,j), wdof]: coupling of p dof (node i, gel j) with plate dofs
        self.Gamma = self._assemble_gamma()

        # pressure blocks (Kronecker structure M_x x S_y)
        self.M_x = plate_mass(sp_)
        self.S_mass_y = (biot.c * op.M_gel.toarray() + alpha**2 * op.N) / self.vol
        self.D_y = op.D_gel.toarray() / self.vol
        self.N_y = op.N

        self.f_parts = self._plate_load_parts()
        self.h_parts = self._pressure_load_parts()
        self._step_cache = {}
        self._A_W_factor = DenseFactor(self.A_W) if sp_.n_red else None

    # ------------------------------------------------------------- assembly

    def _assemble_gamma(self) -> sp.csr_matrix:
        """Gamma[(i,j), wdof] = (alpha/|Ycell|) int N_i(x') [m_V.c_m - k_V.c_b]_j."""
        sp_ = self.space
        ng = self.ng
        nn = sp_.n_nodes
        nq = len(sp_.qp_w)
        blocks = np.zeros((nq, 24, ng))
        for q in range(nq):
            blocks[q, :8] = sp_.B_mem[q].T @ self.cm
            blocks[q, 8:] = -sp_.B_bend[q].T @ self.cb
            blocks[q] *= self.biot.alpha / self.vol * sp_.qp_w[q]
        # per element: entry[(node_a, j), wdof_l] = sum_q N_bil[q,a] * blocks[q,l,j]
        per_elem = np.einsum("qa,qlj->alj", sp_.N_bil, blocks)  # (4, 24, ng)
        rows_all, cols_all, vals_all = [], [], []
        jj = np.arange(ng)
        for e, conn in enumerate(sp_.plate.quads):
            dofs = sp_.elem_dofs[e]
            mask = dofs >= 0
            sub = per_elem[:, mask, :]            # (4, nloc, ng)
            nloc = int(mask.sum())
            r = np.repeat(conn[:, None, None] * ng + jj[None, None, :], nloc, axis=1)
            c = np.broadcast_to(dofs[mask][None, :, None], sub.shape)
            rows_all.append(r.ravel())
            cols_all.append(np.ascontiguousarray(c).ravel())
            vals_all.append(sub.transpose(0, 1, 2).copy().ravel())
        G = sp.coo_matrix(
            (np.concatenate(vals_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
            shape=(nn * ng, sp_.n_red),
        ).tocsr()
        G.sum_duplicates()
        return G

    def _plate_load_parts(self):
        """Reduced load vectors per time degree: int (f1 V1 + f2 V2 + f3 V3)."""
        sp_ = self.space
        qpc = sp_.qp_coords()  # (ne, nq, 2)
        parts = []
        for comp, poly in enumerate(self.loads.components()):
            for deg in range(poly.max_t_degree() + 1):
                terms = [(cc, p1, p2) for (cc, p1, p2, pt) in poly.terms if pt == deg and cc != 0.0]
                if not terms:
                    continue
                fv = np.zeros(qpc.shape[:2])
                for cc, p1, p2 in terms:
                    fv += cc * qpc[..., 0] ** p1 * qpc[..., 1] ** p2
                loc = np.zeros((len(sp_.elem_dofs), 24))
                if comp < 2:
                    loc[:, comp:8:2] = np.einsum("q,qa,eq->ea", sp_.qp_w, sp_.N_bil, fv)
                else:
                    loc[:, 8:] = np.einsum("q,qa,eq->ea", sp_.qp_w, sp_.N_bfs, fv)
                F = np.zeros(sp_.n_red)
                scatter_vector(F, sp_.elem_dofs, loc)
                parts.append((deg, poly.t_off, F))
        return parts

    def _pressure_load_parts(self):
        """(1/|Ycell|) int h phi on the p dofs, per time degree."""
        sp_ = self.space
        qpc = sp_.qp_coords()
        poly = self.loads.h
        parts = []
        for deg in range(poly.max_t_degree() + 1):
            terms = [(cc, p1, p2) for (cc, p1, p2, pt) in poly.terms if pt == deg and cc != 0.0]
            if not terms:
                continue
            hv = np.zeros(qpc.shape[:2])
            for cc, p1, p2 in terms:
                hv += cc * qpc[..., 0] ** p1 * qpc[..., 1] ** p2
            hx = np.zeros(sp_.n_nodes)
            loc = np.einsum("q,qa,eq->ea", sp_.qp_w, sp_.N_bil, hv)
            np.add.at(hx, sp_.plate.quads.ravel(), loc.ravel())
            H = np.outer(hx, self.op.w).reshape(-1) / self.vol
            parts.append((deg, poly.t_off, H))
        return parts

    @staticmethod
    def _eval_parts(parts, t, n):
        out = np.zeros(n)
        for deg, t_off, vec in parts:
            if t_off is not None and t > t_off + 1e-12:
                continue
            out += vec * t**deg
        return out

    def F_W(self, t: float) -> np.ndarray:
        return self._eval_parts(self.f_parts, t, self.space.n_red)

    def H(self, t: float) -> np.ndarray:
        return self._eval_parts(self.h_parts, t, self.space.n_nodes * self.ng)

    # ------------------------------------------------------------- stepping

    def n_p(self) -> int:
        return self.space.n_nodes * self.ng

    def _kron_apply(self, Ax: np.ndarray, Sy: np.ndarray, p: np.ndarray) -> np.ndarray:
        X = p.reshape(self.space.n_nodes, self.ng)
        return (Ax @ X @ Sy.T).reshape(-1)

    def mass_apply(self, p: np.ndarray) -> np.ndarray:
        return self._kron_apply(self.M_x, self.S_mass_y, p)

    def _prepare_step(self, dt: float):
        key = round(dt, 15)
        if key in self._step_cache:
            return self._step_cache[key]
        S_y = self.S_mass_y + dt * self.D_y
        S_y_inv = la.inv(S_y)
        M_x_inv = la.inv(self.M_x)

        def S_inv(p):
            X = p.reshape(self.space.n_nodes, self.ng)
            return (M_x_inv @ X @ S_y_inv.T).reshape(-1)

        # A_schur = A_W + Gamma^T S^-1 Gamma, built column-block-wise
        n_red = self.space.n_red
        A_schur = self.A_W.copy()
        G = self.Gamma
        chunk = max(1, 50_000_000 // max(1, 8 * G.shape[0]))
        for start in range(0, n_red, chunk):
            cols = np.arange(start, min(start + chunk, n_red))
            Gc = G[:, cols].toarray()
            X = Gc.reshape(self.space.n_nodes, self.ng, len(cols))
            Y = np.einsum("ab,bgk->agk", M_x_inv, X)
            Y = np.einsum("agk,gh->ahk", Y, S_y_inv)
            A_schur[:, cols] += G.T @ Y.reshape(-1, len(cols))
        A_schur = 0.5 * (A_schur + A_schur.T)
        entry = (DenseFactor(A_schur), S_inv)
        self._step_cache[key] = entry
        return entry

    def initial_state(self) -> MacroState:
        F0 = self.F_W(0.0)
        if np.linalg.norm(F0) > 0.0 and self._A_W_factor is not None:
            W_red = self._A_W_factor.solve(F0)
        else:
            W_red = np.zeros(self.space.n_red)
        Wm, Wb = self.space.expand(W_red)
        return MacroState(t=0.0, Wm=Wm, Wb=Wb,
                          p=np.zeros((self.space.n_nodes, self.ng)), W_red=W_red)

    def step(self, state: MacroState, dt: float) -> MacroState:
        if dt <= 0.0:
            raise AssemblyError(f"time step must be positive, got {dt}")
        t1 = state.t + dt
        factor, S_inv = self._prepare_step(dt)
        W_red = state.W_red if state.W_red is not None else self.space.restrict(state.Wm, state.Wb)
        p_flat = state.p.reshape(-1)
        b2 = dt * self.H(t1) + self.mass_apply(p_flat) + self.Gamma @ W_red
        rhs = self.F_W(t1) + self.Gamma.T @ S_inv(b2)
        W1 = factor.solve(rhs)
        p1 = S_inv(b2 - self.Gamma @ W1)
        Wm, Wb = self.space.expand(W1)
        return MacroState(t=t1, Wm=Wm, Wb=Wb, p=p1.reshape(self.space.n_nodes, self.ng),
                          W_red=W1)

    # ----------------------------------------------------------- observables

    def energy(self, state: MacroState) -> float:
        """c ||p0||^2_{L2(omega x gel)} + corrected homogenized elastic energy."""
        W_red = state.W_red if state.W_red is not None else self.space.restrict(state.Wm, state.Wb)
        p = state.p.reshape(-1)
        c_term = self.biot.c * float(p @ self._kron_apply(self.M_x, self.op.M_gel.toarray(), p))
        el_W = float(W_red @ (self.A_W @ W_red))
        el_p = self.biot.alpha**2 / self.vol * float(p @ self._kron_apply(self.M_x, self.N_y, p))
        return c_term + el_W + el_p

    def norms(self, state: MacroState) -> dict:
        p = state.p.reshape(-1)
        pm = state.p_mean(self.op.w, self.vol)
        Mgel = self.op.M_gel.toarray()
        return {
            "t": state.t,
            "Wm": float(np.sqrt(sum(state.Wm[:, c] @ (self.M_x @ state.Wm[:, c]) for c in range(2)))),
            "W3": float(np.sqrt(state.W3 @ (self.M_x @ state.W3))),
            "p0": float(np.sqrt(max(p @ self._kron_apply(self.M_x, Mgel, p), 0.0))),
            "p_m": float(np.sqrt(max(pm @ (self.M_x @ pm), 0.0))),
            "energy": self.energy(state),
        }


def assemble_macro(hom: HomogenizedTensor, op: PressureCellOperator, moments: MomentTable,
                   plate: PlateMesh, biot: BiotParams, loads: LoadSpec | None = None) -> MacroSystem:
    """Macro Biot-Kirchhoff-Love system from the cell quantities."""
    return MacroSystem(hom, op, moments, plate, biot, loads)


def run_macro(msys: MacroSystem, T: float, nsteps: int):
    """Implicit Euler macro trajectory with the norm/energy table."""
    if nsteps < 1:
        raise AssemblyError(f"nsteps must be >= 1, got {nsteps}")
    dt = T / nsteps
    state = msys.initial_state()
    states = [state]
    table = [msys.norms(state)]
    for _ in range(nsteps):
        state = msys.step(state, dt)
        states.append(state)
        table.append(msys.norms(state))
    return states, table


# ----------------------------------------------------- direct two-scale oracle


@dataclass
class TwoScaleState:
    """Macro fields plus the per-quadrature-point cell warping of the oracle."""

    t: float
    Wm: np.ndarray
    Wb: np.ndarray
    p: np.ndarray            # (nn, n_gel)
    ubar: np.ndarray         # (ne, nq, n_red_cell) reduced warping coefficients
    W_red: np.ndarray = None

    @property
    def W3(self) -> np.ndarray:
        return self.Wb[:, 0]


class MupSystem:
    """Monolithic discretization of the re-scaled unfolded limit problem.

    Warping unknowns live per macro quadrature point in the reduced periodic
    mean-zero cell space and are eliminated per step through one shared dense
    factorization; no corrector fields or homogenized coefficients are used.
    """

    def __init__(self, cell_mesh: CellMesh, plate: PlateMesh, hooke: HookeTensor,
                 biot: BiotParams, loads: LoadSpec | None = None,
                 budget_dofs: int = 300_000):
        self.cell_mesh = cell_mesh
        self.biot = biot
        self.loads = loads if loads is not None else LoadSpec()
        self.space = build_plate_space(plate)
        self.vol = cell_mesh.volume
        sp_ = self.space
        nq = len(sp_.qp_w)
        ne = len(sp_.elem_dofs)

        red = Reducer(cell_constraints(cell_mesh))
        self.red = red
        nred = red.n_reduced
        gel_nodes = cell_mesh.gel_nodes()
        if len(gel_nodes) == 0:
            raise AssemblyError("cell mesh has no gel phase")
        self.gel_nodes = gel_nodes
        self.ng = len(gel_nodes)
        total = sp_.n_red + ne * nq * nred + sp_.n_nodes * self.ng
        if total > budget_dofs:
            raise BudgetError(
                f"two-scale oracle needs {total} dofs, over the budget of {budget_dofs}")

        K = fem.assemble_elastic_stiffness(cell_mesh, hooke)
        K_red = red.reduce_matrix(K)
        self.K_red = K_red
        Wrows = np.stack([w for (w, _, _) in red.mean_zero])
        ext = np.zeros((nred + 3, nred + 3))
        ext[:nred, :nred] = K_red.toarray()
        ext[:nred, nred:] = Wrows.T
        ext[nred:, :nred] = Wrows
        self._cell_factor = DenseFactor(ext)
        self._nred = nred

        rhs = corrector_rhs(cell_mesh, hooke)
        self.r_m = np.stack([red.P.T @ rhs[("m",) + k] for k in MEMBRANE_KEYS])  # (3, nred)
        self.r_b = np.stack([red.P.T @ rhs[("b",) + k] for k in MEMBRANE_KEYS])
        D0, D1, D2 = averaged_voigt(cell_mesh, hooke)
        E_eng = np.stack([_ENG_UNIT[k] for k in MEMBRANE_KEYS], axis=1)  # (6, 3)
        self.P0 = E_eng.T @ D0 @ E_eng
        self.P1 = E_eng.T @ D1 @ E_eng
        self.P2 = E_eng.T @ D2 @ E_eng

        C_full = fem.assemble_divergence_coupling(cell_mesh, gel_nodes=gel_nodes)
        self.C_red = (C_full @ red.P).tocsr()
        gel_mask = cell_mesh.phase == GEL
        self.M_gel = fem.assemble_scalar_mass(cell_mesh, elems_mask=gel_mask, nodes=gel_nodes)
        self.D_gel = fem.assemble_scalar_diffusion(cell_mesh, biot.K, elems_mask=gel_mask,
                                                   nodes=gel_nodes)
        self.w = fem.lumped_weights(cell_mesh, elems_mask=gel_mask, nodes=gel_nodes)
        self.w3 = fem.lumped_weights(cell_mesh, elems_mask=gel_mask, nodes=gel_nodes,
                                     weight=lambda x, y, z: z)

        self._CredT = self.C_red.T.toarray()
        self.U_C = self.cell_solve(self._CredT)                    # (nred, ng)
        self.N_cell = np.asarray(self.C_red @ self.U_C)
        self.N_cell = 0.5 * (self.N_cell + self.N_cell.T)

        # per-qp elastic blocks (uniform plate grid: one set of nq blocks)
        alpha = biot.alpha
        self.R_E = np.empty((nq, nred, 24))
        self.T_E = np.empty((nq, nred, 24))
        self.CTE = np.empty((nq, self.ng, 24))
        P_loc = np.zeros((nq, 24, 24))
        for q in range(nq):
            Bm, Bb = sp_.B_mem[q], sp_.B_bend[q]
            RE = np.zeros((nred, 24))
            RE[:, :8] = self.r_m.T @ Bm
            RE[:, 8:] = -self.r_b.T @ Bb
            self.R_E[q] = RE
            self.T_E[q] = self.cell_solve(RE)
            self.CTE[q] = np.asarray(self.C_red @ self.T_E[q])
            P_loc[q, :8, :8] = Bm.T @ self.P0 @ Bm
            P_loc[q, :8, 8:] = -Bm.T @ self.P1 @ Bb
            P_loc[q, 8:, :8] = -Bb.T @ self.P1 @ Bm
            P_loc[q, 8:, 8:] = Bb.T @ self.P2 @ Bb
        self.P_loc = P_loc

        # reduced elastic operator on W: A_WW - sum wtilde R_E^T T_E
        wt = sp_.qp_w / self.vol
        loc = np.einsum("q,qab->ab", wt, P_loc)
        loc -= np.einsum("q,qna,qnb->ab", wt, self.R_E, self.T_E)
        self.S_WW = np.zeros((sp_.n_red, sp_.n_red))
        scatter_local(self.S_WW, sp_.elem_dofs, np.broadcast_to(loc, (ne, 24, 24)))

        # W-p coupling S_Wp (dense): elastic u_P part + direct pressure part
        npre = sp_.n_nodes * self.ng
        self.S_Wp = np.zeros((sp_.n_red, npre))
        RU = np.einsum("qna,nj->qaj", self.R_E, self.U_C)   # (nq, 24, ng)
        for q in range(nq):
            blk = alpha * wt[q] * RU[q]
            tr_m = sp_.B_mem[q][0] + sp_.B_mem[q][1]        # (8,)
            tr_b = sp_.B_bend[q][0] + sp_.B_bend[q][1]      # (16,)
            direct = np.zeros((24, self.ng))
            direct[:8] = -alpha / self.vol * sp_.qp_w[q] * np.outer(tr_m, self.w)
            direct[8:] = alpha / self.vol * sp_.qp_w[q] * np.outer(tr_b, self.w3)
            blk = blk + direct
            for e, conn in enumerate(sp_.plate.quads):
                dofs = sp_.elem_dofs[e]
                mask = dofs >= 0
                contrib = np.einsum("a,lj->alj", sp_.N_bil[q], blk[mask])
                pcols = (conn[:, None] * self.ng + np.arange(self.ng)[None, :])
                for a in range(4):
                    self.S_Wp[np.ix_(dofs[mask], pcols[a])] += contrib[a]

        self.M_x = plate_mass(sp_)
        self.S_mass_y = (biot.c * self.M_gel.toarray() + alpha**2 * self.N_cell) / self.vol
        self.D_y = self.D_gel.toarray() / self.vol
        self.f_parts = _plate_load_parts(sp_, self.loads)
        self.h_parts = _pressure_load_parts(sp_, self.loads, self.w, self.vol)
        self._step_cache = {}

    # ---------------------------------------------------------------- pieces

    def cell_solve(self, rhs_red):
        rhs_red = np.asarray(rhs_red, dtype=float)
        pad = np.zeros((3,) + rhs_red.shape[1:])
        ext = np.concatenate([rhs_red, pad], axis=0)
        return self._cell_factor.solve(ext)[: self._nred]

    def _kron_apply(self, Ax, Sy, p):
        X = p.reshape(self.space.n_nodes, self.ng)
        return (Ax @ X @ Sy.T).reshape(-1)

    def mass_apply(self, p):
        return self._kron_apply(self.M_x, self.S_mass_y, p)

    def F_W(self, t):
        return MacroSystem._eval_parts(self.f_parts, t, self.space.n_red)

    def H(self, t):
        return MacroSystem._eval_parts(self.h_parts, t, self.space.n_nodes * self.ng)

    def _prepare_step(self, dt):
        key = round(dt, 15)
        if key in self._step_cache:
            return self._step_cache[key]
        S_y = self.S_mass_y + dt * self.D_y
        S_y_inv = la.inv(S_y)
        M_x_inv = la.inv(self.M_x)

        def S_inv(p):
            X = p.reshape(self.space.n_nodes, self.ng)
            return (M_x_inv @ X @ S_y_inv.T).reshape(-1)

        A = self.S_WW.copy()
        cols = self.S_Wp.T.reshape(self.space.n_nodes, self.ng, -1)
        Y = np.einsum("ab,bgk->agk", M_x_inv, cols)
        Y = np.einsum("agk,gh->ahk", Y, S_y_inv)
        A += self.S_Wp @ Y.reshape(-1, self.space.n_red)
        A = 0.5 * (A + A.T)
        entry = (DenseFactor(A), S_inv)
        self._step_cache[key] = entry
        return entry

    def _local_W(self, W_red):
        """(ne, 24) local reduced coefficients (zeros at clamped dofs)."""
        sp_ = self.space
        out = np.zeros((len(sp_.elem_dofs), 24))
        mask = sp_.elem_dofs >= 0
        out[mask] = W_red[sp_.elem_dofs[mask]]
        return out

    def recover_ubar(self, W_red, p_flat):
        """ubar_q = alpha sum_i N_i U_C p[i] - T_E[q] W_loc per element/qp."""
        sp_ = self.space
        ne, nq = len(sp_.elem_dofs), len(sp_.qp_w)
        Wloc = self._local_W(W_red)
        p_nodes = p_flat.reshape(sp_.n_nodes, self.ng)
        pconn = p_nodes[sp_.plate.quads]                     # (ne, 4, ng)
        ubar = np.empty((ne, nq, self._nred))
        for q in range(nq):
            pq = np.einsum("a,eag->eg", sp_.N_bil[q], pconn)  # (ne, ng)
            ubar[:, q, :] = self.biot.alpha * pq @ self.U_C.T - Wloc @ self.T_E[q].T
        return ubar

    def _coupling_from_ubar(self, ubar):
        """p-space vector (alpha/|Y|) sum_eq w_q N_i (C ubar)_j."""
        sp_ = self.space
        ne, nq = ubar.shape[0], ubar.shape[1]
        out = np.zeros(sp_.n_nodes * self.ng)
        for q in range(nq):
            cu = ubar[:, q, :] @ self._CredT                     # (ne, ng)
            scale = self.biot.alpha / self.vol * sp_.qp_w[q]
            contrib = scale * np.einsum("a,eg->eag", sp_.N_bil[q], cu)
            rows = (sp_.plate.quads[:, :, None] * self.ng
                    + np.arange(self.ng)[None, None, :])
            np.add.at(out, rows.ravel(), contrib.ravel())
        return out

    def _coupling_from_W(self, W_red):
        """Q_W W: the direct div(W_L) part of the pressure coupling (scaled)."""
        sp_ = self.space
        Wloc = self._local_W(W_red)
        out = np.zeros(sp_.n_nodes * self.ng)
        alpha = self.biot.alpha
        for q in range(len(sp_.qp_w)):
            tr_m = sp_.B_mem[q][0] + sp_.B_mem[q][1]
            tr_b = sp_.B_bend[q][0] + sp_.B_bend[q][1]
            trm = Wloc[:, :8] @ tr_m                          # (ne,)
            trk = Wloc[:, 8:] @ tr_b
            blk = np.outer(trm, self.w) - np.outer(trk, self.w3)   # (ne, ng)
            scale = alpha / self.vol * sp_.qp_w[q]
            contrib = scale * np.einsum("a,eg->eag", sp_.N_bil[q], blk)
            rows = (sp_.plate.quads[:, :, None] * self.ng
                    + np.arange(self.ng)[None, None, :])
            np.add.at(out, rows.ravel(), contrib.ravel())
        return out

    # --------------------------------------------------------------- driver

    def initial_state(self) -> TwoScaleState:
        F0 = self.F_W(0.0)
        if np.linalg.norm(F0) > 0.0:
            W_red = la.solve(self.S_WW, F0, assume_a="pos")
        else:
            W_red = np.zeros(self.space.n_red)
        p = np.zeros((self.space.n_nodes, self.ng))
        ubar = self.recover_ubar(W_red, p.reshape(-1))
        Wm, Wb = self.space.expand(W_red)
        return TwoScaleState(t=0.0, Wm=Wm, Wb=Wb, p=p, ubar=ubar, W_red=W_red)

    def step(self, state: TwoScaleState, dt: float) -> TwoScaleState:
        t1 = state.t + dt
        factor, S_inv = self._prepare_step(dt)
        W_red = state.W_red
        p_flat = state.p.reshape(-1)
        # b2 collects: dt H + mass p^n + couplings at t^n (W and ubar parts)
        b2 = dt * self.H(t1) + self._kron_apply(
            self.M_x, (self.biot.c * self.M_gel.toarray()) / self.vol, p_flat)
        b2 += self._coupling_from_ubar(state.ubar) + self._coupling_from_W(W_red)
        rhs = self.F_W(t1) - self.S_Wp @ S_inv(b2)
        W1 = factor.solve(rhs)
        p1 = S_inv(b2 + self.S_Wp.T @ W1)
        ubar1 = self.recover_ubar(W1, p1)
        Wm, Wb = self.space.expand(W1)
        return TwoScaleState(t=t1, Wm=Wm, Wb=Wb, p=p1.reshape(self.space.n_nodes, self.ng),
                             ubar=ubar1, W_red=W1)

    def energy(self, state: TwoScaleState) -> float:
        """c ||p0||^2 + (1/|Y|) || E(W) + e_y(ubar) ||_A^2 of the oracle state."""
        sp_ = self.space
        p = state.p.reshape(-1)
        c_term = self.biot.c * float(
            p @ self._kron_apply(self.M_x, self.M_gel.toarray(), p))
        Wloc = self._local_W(state.W_red)
        wt = sp_.qp_w / self.vol
        elastic = 0.0
        for q in range(len(sp_.qp_w)):
            u = state.ubar[:, q, :]
            elastic += wt[q] * float(
                np.einsum("ea,ab,eb->", Wloc, self.P_loc[q], Wloc)
                + 2.0 * np.einsum("ea,na,en->", Wloc, self.R_E[q], u)
                + np.einsum("en,en->", (self.K_red @ u.T).T, u)
            )
        return c_term + elastic

    def norms(self, state: TwoScaleState) -> dict:
        p = state.p.reshape(-1)
        pm = (state.p @ self.w) / self.vol
        return {
            "t": state.t,
            "Wm": float(np.sqrt(sum(state.Wm[:, c] @ (self.M_x @ state.Wm[:, c]) for c in range(2)))),
            "W3": float(np.sqrt(state.W3 @ (self.M_x @ state.W3))),
            "p0": float(np.sqrt(max(p @ self._kron_apply(self.M_x, self.M_gel.toarray(), p), 0.0))),
            "p_m": float(np.sqrt(max(pm @ (self.M_x @ pm), 0.0))),
            "energy": self.energy(state),
        }


def _plate_load_parts(space: PlateSpace, loads: LoadSpec):
    qpc = space.qp_coords()
    parts = []
    for comp, poly in enumerate(loads.components()):
        for deg in range(poly.max_t_degree() + 1):
            terms = [(cc, p1, p2) for (cc, p1, p2, pt) in poly.terms if pt == deg and cc != 0.0]
            if not terms:
                continue
            fv = np.zeros(qpc.shape[:2])
            for cc, p1, p2 in terms:
                fv += cc * qpc[..., 0] ** p1 * qpc[..., 1] ** p2
            loc = np.zeros((len(space.elem_dofs), 24))
            if comp < 2:
                loc[:, comp:8:2] = np.einsum("q,qa,eq->ea", space.qp_w, space.N_bil, fv)
            else:
                loc[:, 8:] = np.einsum("q,qa,eq->ea", space.qp_w, space.N_bfs, fv)
            F = np.zeros(space.n_red)
            scatter_vector(F, space.elem_dofs, loc)
            parts.append((deg, poly.t_off, F))
    return parts


def _pressure_load_parts(space: PlateSpace, loads: LoadSpec, w_gel: np.ndarray, vol: float):
    qpc = space.qp_coords()
    poly = loads.h
    parts = []
    for deg in range(poly.max_t_degree() + 1):
        terms = [(cc, p1, p2) for (cc, p1, p2, pt) in poly.terms if pt == deg and cc != 0.0]
        if not terms:
            continue
        hv = np.zeros(qpc.shape[:2])
        for cc, p1, p2 in terms:
            hv += cc * qpc[..., 0] ** p1 * qpc[..., 1] ** p2
        hx = np.zeros(space.n_nodes)
        loc = np.einsum("q,qa,eq->ea", space.qp_w, space.N_bil, hv)
        np.add.at(hx, space.plate.quads.ravel(), loc.ravel())
        parts.append((deg, poly.t_off, np.outer(hx, w_gel).reshape(-1) / vol))
    return parts


def solve_mup_direct(cell_mesh: CellMesh, plate: PlateMesh, hooke: HookeTensor,
                     biot: BiotParams, loads: LoadSpec, T: float, nsteps: int,
                     budget_dofs: int = 300_000):
    """Monolithic trajectory of the unfolded limit problem (the oracle path)."""
    if nsteps < 1:
        raise AssemblyError(f"nsteps must be >= 1, got {nsteps}")
    msys = MupSystem(cell_mesh, plate, hooke, biot, loads, budget_dofs=budget_dofs)
    dt = T / nsteps
    state = msys.initial_state()
    states = [state]
    table = [msys.norms(state)]
    for _ in range(nsteps):
        state = msys.step(state, dt)
        states.append(state)
        table.append(msys.norms(state))
    return msys, states, table


# ------------------------------------------------- Kirchhoff-Love residuals


class ResidualContext:
    """Precomputed cell-side sampling data for the unfolded residual norms."""

    def __init__(self, cell_mesh: CellMesh, correctors, op: PressureCellOperator):
        self.cell_mesh = cell_mesh
        self.op = op
        self.sampler = CellSampler(cell_mesh)
        s = self.sampler
        self.nq_flat = s.y_q.shape[0] * s.y_q.shape[1]
        self.y_flat = s.y_q.reshape(-1, 3)
        self.w_flat = np.tile(s.wdet, s.y_q.shape[0])
        # corrector strains at the cell qps, engineering components
        self.chiS_m = np.stack([
            s.strains(correctors.field("m", *k)).reshape(-1, 6) for k in MEMBRANE_KEYS])
        self.chiS_b = np.stack([
            s.strains(correctors.field("b", *k)).reshape(-1, 6) for k in MEMBRANE_KEYS])
        # pressure-corrector strain responses per gel dof (unit convention:
        # e(u_P) = alpha * sum_j q_j * UPS[j])
        cols = [op.reducer.expand(op.U_C[:, j]).reshape(-1, 3) for j in range(op.n_gel)]
        self.UPS = np.stack([s.strains(c).reshape(-1, 6) for c in cols])
        # gel-side sampling
        gel_dof_of_node = np.full(cell_mesh.n_nodes, -1, dtype=np.int64)
        gel_dof_of_node[op.gel_nodes] = np.arange(op.n_gel)
        self.gel_dof_of_node = gel_dof_of_node
        self.gel_elems = s.gel_elems
        yg = s.y_q[self.gel_elems]
        self.yg_flat = yg.reshape(-1, 3)
        self.wg_flat = np.tile(s.wdet, len(self.gel_elems))
        self.eng_frob = np.array([1.0, 1.0, 1.0, 0.5, 0.5, 0.5])


def kirchhoff_love_residual(U: np.ndarray, p: np.ndarray, micro: MicroMesh,
                            ctx: ResidualContext, msys: MacroSystem,
                            mstate: MacroState) -> dict:
    """Discrete L2(omega x Ycell) distances between the unfolded micro solution
    and the Kirchhoff-Love limit built from the macro state."""
    cell = ctx.cell_mesh
    _check_matched(micro, cell)
    eps = micro.eps
    alpha = msys.biot.alpha
    space = msys.space
    U = np.asarray(U).reshape(-1, 3)
    s = ctx.sampler
    k2 = np.stack([np.arange(micro.total_cells) % micro.n_cells[0],
                   np.arange(micro.total_cells) // micro.n_cells[0]], axis=-1)
    (a1, _), (a2, _) = micro.omega
    ng = ctx.op.n_gel
    e1 = e2 = e3 = e4 = 0.0
    for k in range(micro.total_cells):
        nmap = micro.cell_node_map(k)
        nodal = U[nmap]
        vals = s.values(nodal).reshape(-1, 3)
        strains = s.strains(nodal).reshape(-1, 6) / eps**2   # (1/eps) Pi(e(U))
        y3 = ctx.y_flat[:, 2]
        pts = np.stack([a1 + eps * (k2[k, 0] + ctx.y_flat[:, 0]),
                        a2 + eps * (k2[k, 1] + ctx.y_flat[:, 1])], axis=-1)
        Wm_vals, m_eng = space.eval_membrane(mstate.Wm, pts)
        W3v, W3g, k_eng = space.eval_bending(mstate.Wb, pts)
        # in-plane displacement residual
        tgt = Wm_vals - y3[:, None] * W3g
        diff = vals[:, :2] / eps - tgt
        e1 += eps**2 * float(np.einsum("p,pc->", ctx.w_flat, diff**2))
        # deflection residual
        d2 = vals[:, 2] - W3v
        e2 += eps**2 * float(ctx.w_flat @ d2**2)
        # strain residual: E(W) + e_y(u_d) + e_y(u_P)
        EW = np.zeros((len(pts), 6))
        EW[:, 0] = m_eng[:, 0] - y3 * k_eng[:, 0]
        EW[:, 1] = m_eng[:, 1] - y3 * k_eng[:, 1]
        EW[:, 5] = m_eng[:, 2] - y3 * k_eng[:, 2]
        e_ud = (np.einsum("pI,Ipc->pc", m_eng, ctx.chiS_m)
                - np.einsum("pI,Ipc->pc", k_eng, ctx.chiS_b))
        qgel = space.eval_bilinear_nodal(mstate.p, pts)      # (P, ng)
        e_up = alpha * np.einsum("pj,jpc->pc", qgel, ctx.UPS)
        d3 = strains - (EW + e_ud + e_up)
        e3 += eps**2 * float(np.einsum("p,pc,c->", ctx.w_flat, d3**2, ctx.eng_frob))
        # pressure residual on the gel
        pk = p.reshape(micro.total_cells, ng)[k] / eps       # (1/eps) Pi(p)
        pvals = s.scalar_values_gel(pk, ctx.gel_dof_of_node).reshape(-1)
        gts = np.stack([a1 + eps * (k2[k, 0] + ctx.yg_flat[:, 0]),
                        a2 + eps * (k2[k, 1] + ctx.yg_flat[:, 1])], axis=-1)
        # p0 at (x', y): interpolate the nodal gel fields in x', sample in y
        p0t = space.eval_bilinear_nodal(mstate.p, gts)       # (P_gel, ng)
        conn = cell.elems[ctx.gel_elems]
        dof_conn = ctx.gel_dof_of_node[conn]                 # (neg, 8)
        nq = s.N.shape[0]
        p0t_r = p0t.reshape(len(ctx.gel_elems), nq, ng)
        gathered = np.take_along_axis(
            p0t_r, np.broadcast_to(dof_conn[:, None, :], (len(ctx.gel_elems), nq, 8)), axis=2)
        p0_target = np.einsum("qa,eqa->eq", s.N, gathered)
        d4 = pvals - p0_target.reshape(-1)
        e4 += eps**2 * float(ctx.wg_flat @ d4**2)
    return {
        "e_inplane": float(np.sqrt(e1)),
        "e_deflection": float(np.sqrt(e2)),
        "e_strain": float(np.sqrt(e3)),
        "e_pressure": float(np.sqrt(e4)),
    }


def convergence_study(geom, hooke: HookeTensor, biot: BiotParams, loads: LoadSpec,
                      omega, eps_list, n_cell: int, m_plate: int, T: float,
                      nsteps: int, tol: float = 1e-9):
    """Residual table along an eps sequence against one fixed macro solve.

    The micro and macro trajectories use the same implicit Euler grid so the
    time-discretization error cancels from the comparison; only monotone
    decrease is asserted downstream (the limit carries no proven rate).
    """
    from .cell import compute_homogenized, divergence_moments, solve_correctors
    from .geometry import build_cell_mesh, build_micro_mesh, build_plate_mesh
    from .micro import assemble_micro, run_transient

    cm = build_cell_mesh(geom, n_cell)
    cs = solve_correctors(cm, hooke)
    hom = compute_homogenized(cm, hooke, cs)
    op = PressureCellOperator(cm, hooke, biot)
    mom = divergence_moments(cs, op)
    plate = build_plate_mesh(omega, m_plate)
    msys = assemble_macro(hom, op, mom, plate, biot, loads)
    mstates, mtable = run_macro(msys, T, nsteps)
    ctx = ResidualContext(cm, cs, op)
    rows = []
    for eps in eps_list:
        mm = build_micro_mesh(geom, eps, omega, n_cell)
        sys_eps = assemble_micro(mm, hooke, biot, eps, loads)
        traj = run_transient(sys_eps, T, nsteps, stepper="monolithic", tol=tol,
                             keep_states=False)
        res = kirchhoff_love_residual(traj.final.U, traj.final.p, mm, ctx, msys,
                                      mstates[-1])
        res["eps"] = eps
        res["e_U_max"] = traj.max_norm("e_U")
        res["p_max"] = traj.max_norm("p")
        rows.append(res)
    keys = ("e_inplane", "e_deflection", "e_strain", "e_pressure")
    monotone = {k: all(rows[i + 1][k] < rows[i][k] for i in range(len(rows) - 1))
                for k in keys}
    return rows, monotone, (msys, mstates, mtable)


# -------------------------------------------------- unfolded-space spectrum


def norm_equivalence_spectrum(cell_mesh: CellMesh):
    """Extremal generalized eigenvalues of the shifted-strain semi-norm.

    Left form: || P(eta, zeta, y3) + e_y(w) ||^2_{L2(Ycell)} on
    R^3 x R^3 x (periodic mean-zero vector fields); right form:
    |eta|^2 + |zeta|^2 + ||w||^2_{H1}.  Returns (c_min, C_max).
    """
    from .material import HookeTensor as _HT

    red = Reducer(cell_constraints(cell_mesh))
    nred = red.n_reduced
    ident = np.diag([1.0, 1.0, 1.0, 0.5, 0.5, 0.5])
    id_hooke = _HT(fiber=ident, gel=ident)
    K_I = red.reduce_matrix(fem.assemble_strain_product(cell_mesh)).toarray()
    rhs = corrector_rhs(cell_mesh, id_hooke)
    # eta patterns: M^11, M^22, 2 M^12; zeta patterns carry -y3
    r_eta = np.stack([
        red.P.T @ rhs[("m", 0, 0)],
        red.P.T @ rhs[("m", 1, 1)],
        2.0 * (red.P.T @ rhs[("m", 0, 1)]),
    ])
    r_zeta = -np.stack([
        red.P.T @ rhs[("b", 0, 0)],
        red.P.T @ rhs[("b", 1, 1)],
        2.0 * (red.P.T @ rhs[("b", 0, 1)]),
    ])
    n = 6 + nred
    Q_S = np.zeros((n, n))
    # (eta, zeta) own block: int |P|^2 with |Ycell| = 2, int y3^2 dy = 2/3,
    # ordering (eta1, eta2, eta3, zeta1, zeta2, zeta3)
    Q_S[:6, :6] = np.diag([2.0, 2.0, 4.0, 2.0 / 3.0, 2.0 / 3.0, 4.0 / 3.0])
    R = np.vstack([r_eta, r_zeta])            # (6, nred)
    Q_S[:6, 6:] = R
    Q_S[6:, :6] = R.T
    Q_S[6:, 6:] = K_I

    M_sc = fem.assemble_scalar_mass(cell_mesh)
    G_vec = fem.assemble_vector_gradient_product(cell_mesh)
    M_vec = sp.kron(M_sc, sp.eye(3), format="csr")
    # note: vector dofs are node-major (3*node+c), matching kron(M, I3)
    H1 = red.reduce_matrix((M_vec + G_vec).tocsr()).toarray()
    Q_R = np.zeros((n, n))
    Q_R[:6, :6] = np.eye(6)
    Q_R[6:, 6:] = H1

    # mean-zero reduction of the w block
    Wmean = np.stack([w for (w, _, _) in red.mean_zero])
    Z = la.null_space(Wmean)
    Tmat = np.zeros((n, 6 + Z.shape[1]))
    Tmat[:6, :6] = np.eye(6)
    Tmat[6:, 6:] = Z
    A = Tmat.T @ Q_S @ Tmat
    B = Tmat.T @ Q_R @ Tmat
    vals = la.eigh(0.5 * (A + A.T), 0.5 * (B + B.T), eigvals_only=True)
    return float(vals[0]), float(vals[-1])


def step_macro(msys: MacroSystem, state: MacroState, dt: float) -> MacroState:
    """One implicit Euler step of the homogenized system (operation alias)."""
    return msys.step(state, dt)
