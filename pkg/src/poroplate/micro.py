"""The eps-scale coupled problem: assembly, two time-stepping paths, diagnostics.

The implicit Euler step of the coupled system

    B U^{n+1} - alpha C^T p^{n+1} = F^{n+1}
    alpha C (U^{n+1}-U^n) + (cM + dt D) p^{n+1} = dt G^{n+1} + cM p^n

is solved either monolithically (pressure block eliminated, one SPD solve on
the displacement) or through the reduced pressure ODE

    (cM + alpha^2 C B^-1 C^T) db/dt + D b = G - alpha C B^-1 dF/dt

with nested CG (inner B-solves).  With the consistent initial displacement
U(0) = B^-1 F(0) the two recursions are algebraically identical, which the
acceptance suite checks to 1e-7.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .errors import AssemblyError, GeometryError
from .fem.constraints import ConstraintSet, Reducer
from .fem.solvers import RepeatedBlockSolver, pcg, solve_saddle, solve_spd
from .geometry import GEL, MicroMesh, _StructuredHexMesh
from .material import BiotParams, HookeTensor, LoadSpec, require_admissible


def clamp_constraints(mesh: MicroMesh) -> ConstraintSet:
    """Homogeneous Dirichlet on the lateral boundary, all three components."""
    dofs = (3 * mesh.lateral_nodes[:, None] + np.arange(3)).reshape(-1)
    return ConstraintSet(ndof=3 * mesh.n_nodes, dirichlet_dofs=dofs)


def _poly_parts(mesh: MicroMesh, poly, comp: int, scale: float):
    """Body-force spatial vectors per time degree for one load component."""
    parts = []
    for deg in range(poly.max_t_degree() + 1):
        terms = [(c, p1, p2) for (c, p1, p2, pt) in poly.terms if pt == deg and c != 0.0]
        if not terms:
            continue

        def f_at(x, y, z, _terms=terms, _comp=comp):
            v = np.zeros(x.shape + (3,))
            for c, p1, p2 in _terms:
                v[..., _comp] += c * x**p1 * y**p2
            return v

        parts.append((deg, scale * fem.assemble_body_force(mesh, f_at)))
    return parts


def _source_parts(mesh: MicroMesh, poly, scale: float):
    parts = []
    gel_mask = mesh.phase == GEL
    for deg in range(poly.max_t_degree() + 1):
        terms = [(c, p1, p2) for (c, p1, p2, pt) in poly.terms if pt == deg and c != 0.0]
        if not terms:
            continue

        def h_at(x, y, z, _terms=terms):
            v = np.zeros(x.shape)
            for c, p1, p2 in _terms:
                v += c * x**p1 * y**p2
            return v

        parts.append((deg, scale * fem.assemble_scalar_source(
            mesh, h_at, elems_mask=gel_mask, nodes=mesh.gel_nodes)))
    return parts


def _eval_parts(parts, t: float, t_off, n: int) -> np.ndarray:
    out = np.zeros(n)
    if t_off is not None and t > t_off + 1e-12:
        return out
    for deg, vec in parts:
        out += vec * t**deg
    return out


@dataclass
class GalerkinSystem:
    """Assembled operators of the micro problem on one mesh."""

    mesh: MicroMesh
    hooke: HookeTensor
    biot: BiotParams
    eps: float
    reducer: Reducer
    B: sp.csr_matrix            # clamped stiffness (reduced)
    C: sp.csr_matrix            # gel pressure x reduced displacement, unscaled
    M: sp.csr_matrix            # gel pressure mass, unscaled
    D: sp.csr_matrix            # eps^2 K diffusion on the gel
    loads: LoadSpec
    f_parts: list
    g_parts: list
    strain_sq: sp.csr_matrix    # ||e(U)||^2 on full dofs
    grad_sq: sp.csr_matrix      # ||grad U||^2 on full dofs
    grad_p_sq: sp.csr_matrix    # ||grad p||^2 on gel dofs (unscaled)

    @property
    def n_p(self) -> int:
        return self.M.shape[0]

    @property
    def decoupled(self) -> bool:
        return self.biot.alpha == 0.0

    def F(self, t: float) -> np.ndarray:
        """Reduced displacement load vector at time t (eps scalings included)."""
        full = np.zeros(3 * self.mesh.n_nodes)
        for comp, parts in enumerate(self.f_parts):
            poly = self.loads.components()[comp]
            full += _eval_parts(parts, t, poly.t_off, len(full))
        return self.reducer.P.T @ full

    def G(self, t: float) -> np.ndarray:
        return _eval_parts(self.g_parts, t, self.loads.h.t_off, self.n_p)

    def pressure_block(self, dt: float) -> RepeatedBlockSolver:
        """(cM + dt D)^-1, block-diagonal over the congruent gel components."""
        S = (self.biot.c * self.M + dt * self.D).tocsr()
        ng = self.mesh.n_gel_local
        S_local = S[:ng, :ng].toarray()
        return RepeatedBlockSolver(S_local, self.mesh.total_cells)

    def cell_pressure_rows(self, cell: int) -> slice:
        ng = self.mesh.n_gel_local
        return slice(cell * ng, (cell + 1) * ng)


def assemble_micro(mesh: MicroMesh, hooke: HookeTensor, biot: BiotParams, eps: float,
                   loads: LoadSpec | None = None) -> GalerkinSystem:
    """Assemble stiffness, coupling, scaled diffusion, and load parts."""
    require_admissible(hooke, biot)
    if abs(mesh.eps - eps) > 1e-12:
        raise AssemblyError(f"mesh was tiled with eps={mesh.eps}, got eps={eps}")
    if len(mesh.gel_nodes) == 0:
        raise AssemblyError("micro mesh has no gel phase")
    loads = loads if loads is not None else LoadSpec()
    reducer = Reducer(clamp_constraints(mesh))
    B_full = fem.assemble_elastic_stiffness(mesh, hooke)
    B = reducer.reduce_matrix(B_full)
    C_full = fem.assemble_divergence_coupling(mesh, gel_nodes=mesh.gel_nodes)
    C = (C_full @ reducer.P).tocsr()
    M, D = fem.assembly.micro_pressure_blocks(biot, mesh, eps)
    f_parts = [
        _poly_parts(mesh, loads.f1, 0, eps),
        _poly_parts(mesh, loads.f2, 1, eps),
        _poly_parts(mesh, loads.f3, 2, eps**2),
    ]
    g_parts = _source_parts(mesh, loads.h, eps)
    gel_mask = mesh.phase == GEL
    return GalerkinSystem(
        mesh=mesh, hooke=hooke, biot=biot, eps=eps, reducer=reducer,
        B=B, C=C, M=M, D=D, loads=loads, f_parts=f_parts, g_parts=g_parts,
        strain_sq=fem.assemble_strain_product(mesh),
        grad_sq=fem.assemble_vector_gradient_product(mesh),
        grad_p_sq=fem.assemble_scalar_diffusion(mesh, np.eye(3), elems_mask=gel_mask,
                                                nodes=mesh.gel_nodes),
    )


@dataclass
class MicroState:
    """Nodal displacement and gel pressure at one time level."""

    t: float
    U: np.ndarray          # (n_nodes, 3), zero on the lateral boundary
    p: np.ndarray          # (n_gel,)
    U_red: np.ndarray = None

    def norms(self, sys: GalerkinSystem) -> dict:
        u = self.U.reshape(-1)
        return {
            "t": self.t,
            "e_U": float(np.sqrt(max(u @ (sys.strain_sq @ u), 0.0))),
            "p": float(np.sqrt(max(self.p @ (sys.M @ self.p), 0.0))),
            "eps_grad_p": sys.eps * float(np.sqrt(max(self.p @ (sys.grad_p_sq @ self.p), 0.0))),
            "grad_U": float(np.sqrt(max(u @ (sys.grad_sq @ u), 0.0))),
        }

    def energy(self, sys: GalerkinSystem) -> float:
        """c ||p||^2 + ||e(U)||_A^2 (the decay functional of the a priori bound)."""
        ur = self.U_red if self.U_red is not None else sys.reducer.restrict(self.U.reshape(-1))
        return float(sys.biot.c * (self.p @ (sys.M @ self.p)) + ur @ (sys.B @ ur))


def initial_state(sys: GalerkinSystem, tol: float = 1e-10) -> MicroState:
    """Zero data; if F(0) != 0 the quasi-static constraint fixes U(0) = B^-1 F(0)."""
    F0 = sys.F(0.0)
    if np.linalg.norm(F0) > 0.0:
        U_red = solve_spd(sys.B, F0, tol=tol)
    else:
        U_red = np.zeros(sys.B.shape[0])
    U = sys.reducer.expand(U_red).reshape(-1, 3)
    return MicroState(t=0.0, U=U, p=np.zeros(sys.n_p), U_red=U_red)


def _schur_diag_extra(sys: GalerkinSystem, block: RepeatedBlockSolver) -> np.ndarray:
    """diag of alpha^2 C^T (cM + dtD)^-1 C for the Jacobi Schur preconditioner.

    The gel blocks are congruent, so one local diagonal is computed from the
    first cell and scattered to every cell's touched displacement dofs.
    """
    Sinv = block._inv
    a2 = sys.biot.alpha**2
    cell0 = sys.C[sys.cell_pressure_rows(0)].tocsr()
    cols0 = np.unique(cell0.indices)
    C0 = cell0[:, cols0].toarray()
    local = a2 * np.einsum("ij,ik,kj->j", C0, Sinv, C0, optimize=True)
    d = np.zeros(sys.B.shape[0])
    for cell in range(sys.mesh.total_cells):
        cols = np.unique(sys.C[sys.cell_pressure_rows(cell)].tocsr().indices)
        d[cols] += local
    return d


def step_monolithic(sys: GalerkinSystem, state: MicroState, dt: float, *,
                    tol: float = 1e-10, block=None) -> MicroState:
    """One implicit Euler step by pressure-Schur elimination (single SPD solve)."""
    if dt <= 0.0:
        raise AssemblyError(f"time step must be positive, got {dt}")
    t1 = state.t + dt
    alpha = sys.biot.alpha
    block = block if block is not None else sys.pressure_block(dt)
    U_red = state.U_red if state.U_red is not None else sys.reducer.restrict(state.U.reshape(-1))
    b_u = sys.F(t1)
    b_p = dt * sys.G(t1) + sys.biot.c * (sys.M @ state.p) + alpha * (sys.C @ U_red)
    M_blk = (sys.biot.c * sys.M + dt * sys.D).tocsr()
    diag_extra = _schur_diag_extra(sys, block) if alpha != 0.0 else None
    u, p = solve_saddle(sys.B, alpha * sys.C, M_blk, (b_u, b_p),
                        m_solver=block, tol=tol, rtol_check=1e-9,
                        x0=U_red, diag_extra=diag_extra)
    return MicroState(t=t1, U=sys.reducer.expand(u).reshape(-1, 3), p=p, U_red=u)


def step_schur(sys: GalerkinSystem, state: MicroState, dt: float, *,
               tol: float = 1e-10, inner_tol: float = 1e-12, block=None) -> MicroState:
    """One implicit Euler step of the reduced pressure ODE with nested B-solves."""
    if dt <= 0.0:
        raise AssemblyError(f"time step must be positive, got {dt}")
    t1 = state.t + dt
    alpha, c = sys.biot.alpha, sys.biot.c
    U_red = state.U_red if state.U_red is not None else sys.reducer.restrict(state.U.reshape(-1))

    def B_inv(v):
        return solve_spd(sys.B, v, tol=inner_tol)

    F1 = sys.F(t1)
    dF = F1 - sys.F(state.t)

    def mass_like(z):
        out = c * (sys.M @ z)
        if alpha != 0.0:
            out = out + alpha**2 * (sys.C @ B_inv(sys.C.T @ z))
        return out

    def A_op(z):
        return mass_like(z) + dt * (sys.D @ z)

    rhs = dt * sys.G(t1) + mass_like(state.p)
    if alpha != 0.0 and np.linalg.norm(dF) > 0.0:
        rhs -= alpha * (sys.C @ B_inv(dF))

    block = block if block is not None else sys.pressure_block(dt)
    ng = sys.mesh.n_gel_local
    # preconditioner: exact mass+diffusion block plus a Jacobi estimate of the
    # elastic coupling term, shared by all congruent cells
    S = (c * sys.M + dt * sys.D).tocsr()
    S_local = S[:ng, :ng].toarray()
    if alpha != 0.0:
        C0 = sys.C[sys.cell_pressure_rows(0)]
        dB = sys.B.diagonal()
        dB = np.where(dB > 0, dB, 1.0)
        X = (C0.multiply(1.0 / dB)).tocsr()
        S_local = S_local + alpha**2 * (X @ C0.T).toarray()
    prec = RepeatedBlockSolver(S_local, sys.mesh.total_cells)

    p, _ = pcg(A_op, rhs, tol=tol, precond=prec.solve, x0=state.p)
    u = solve_spd(sys.B, F1 + alpha * (sys.C.T @ p), tol=inner_tol, x0=U_red)
    return MicroState(t=t1, U=sys.reducer.expand(u).reshape(-1, 3), p=p, U_red=u)


@dataclass
class Trajectory:
    """States plus the per-step norm/energy table of the a-priori quantities."""

    states: list
    table: list = field(default_factory=list)
    decoupled: bool = False

    @property
    def final(self) -> MicroState:
        return self.states[-1]

    def max_norm(self, key: str) -> float:
        return max(row[key] for row in self.table)

    def korn_constant(self, eps: float) -> float:
        """max over steps of eps * ||grad U|| / ||e(U)|| (clamped discrete Korn)."""
        vals = [eps * row["grad_U"] / row["e_U"] for row in self.table if row["e_U"] > 0.0]
        return max(vals) if vals else 0.0


def run_transient(sys: GalerkinSystem, T: float, nsteps: int, *,
                  stepper: str = "monolithic", tol: float = 1e-10,
                  keep_states: bool = True) -> Trajectory:
    """Implicit Euler trajectory on [0, T] recording the a-priori norm table."""
    if nsteps < 1:
        raise AssemblyError(f"nsteps must be >= 1, got {nsteps}")
    dt = T / nsteps
    step = {"monolithic": step_monolithic, "schur": step_schur}[stepper]
    block = sys.pressure_block(dt)
    state = initial_state(sys, tol=tol)
    traj = Trajectory(states=[state], decoupled=sys.decoupled)
    row = state.norms(sys)
    row["energy"] = state.energy(sys)
    traj.table.append(row)
    for _ in range(nsteps):
        state = step(sys, state, dt, tol=tol, block=block)
        if not keep_states:
            traj.states = [state]
        else:
            traj.states.append(state)
        row = state.norms(sys)
        row["energy"] = state.energy(sys)
        traj.table.append(row)
    return traj


# --------------------------------------------------------- decomposition ops

def _thickness_ops(mesh: MicroMesh):
    """Column layout: node id = col + ncol * layer with ncol in-plane nodes."""
    nx, ny, nz = mesh.grid.nelems
    ncol = (nx + 1) * (ny + 1)
    return ncol, nz + 1, mesh.spacing[2]


def thickness_average(mesh: MicroMesh, U: np.ndarray) -> np.ndarray:
    """(1/2eps) int U dx3 per mid-surface node (exact for nodal interpolants)."""
    ncol, nlay, hz = _thickness_ops(mesh)
    V = U.reshape(nlay, ncol, -1)
    w = np.full(nlay, hz)
    w[0] = w[-1] = hz / 2.0
    return np.einsum("k,kcm->cm", w, V) / (2.0 * mesh.eps)


def thickness_first_moment(mesh: MicroMesh, U: np.ndarray) -> np.ndarray:
    """int x3 U dx3 per mid-surface node, exact per linear layer."""
    ncol, nlay, hz = _thickness_ops(mesh)
    V = U.reshape(nlay, ncol, -1)
    z = -mesh.eps + hz * np.arange(nlay)
    w = np.zeros(nlay)
    # layer [za, zb]: (h/6) * (Ua (2 za + zb) + Ub (za + 2 zb))
    w[:-1] += (hz / 6.0) * (2.0 * z[:-1] + z[1:])
    w[1:] += (hz / 6.0) * (z[:-1] + 2.0 * z[1:])
    return np.einsum("k,kcm->cm", w, V)


@dataclass
class DecompositionReport:
    """Elementary/warping split of a plate displacement plus the norm table."""

    W: np.ndarray          # (n_mid, 3) mid-surface displacement
    R: np.ndarray          # (n_mid, 2) fiber rotations
    wbar: np.ndarray       # (n_nodes, 3) warping, zero thickness average
    U_mid: np.ndarray | None = None   # complementary split of the gel residual
    ubar: np.ndarray | None = None
    norms: dict = field(default_factory=dict)
    max_wbar_average: float = 0.0


def griso_decompose(U: np.ndarray, mesh: MicroMesh, eps: float) -> DecompositionReport:
    """Split U into elementary displacement (W, x3 R) and mean-zero warping."""
    if abs(mesh.eps - eps) > 1e-12:
        raise GeometryError("eps does not match the mesh tiling")
    ncol, nlay, hz = _thickness_ops(mesh)
    U = U.reshape(-1, 3)
    W = thickness_average(mesh, U)
    R = (3.0 / (2.0 * eps**3)) * thickness_first_moment(mesh, U[:, :2])
    z = mesh.nodes[:, 2]
    WE = np.empty_like(U)
    tileW = np.tile(W, (nlay, 1))
    tileR = np.tile(R, (nlay, 1))
    WE[:, 0] = tileW[:, 0] + z * tileR[:, 0]
    WE[:, 1] = tileW[:, 1] + z * tileR[:, 1]
    WE[:, 2] = tileW[:, 2]
    wbar = U - WE
    avg = thickness_average(mesh, wbar) * (2.0 * eps)
    return DecompositionReport(W=W, R=R, wbar=wbar,
                               max_wbar_average=float(np.abs(avg).max()))


def _gel_template_partition(mesh: MicroMesh):
    """Interior / wall / cap split of the cell-local gel node template."""
    tpl = mesh.gel_local_template
    li, lj, lk = tpl.T
    i_lo, i_hi = li.min(), li.max()
    j_lo, j_hi = lj.min(), lj.max()
    k_lo, k_hi = lk.min(), lk.max()
    on_wall = (li == i_lo) | (li == i_hi) | (lj == j_lo) | (lj == j_hi)
    full_span = (k_lo == 0) and (k_hi == 2 * mesh.n)
    on_cap = ((lk == k_lo) | (lk == k_hi)) & ~on_wall
    interior = ~(on_wall | on_cap)
    return on_wall, on_cap, interior, full_span


def extend_fiber(U: np.ndarray, mesh: MicroMesh, hooke: HookeTensor) -> np.ndarray:
    """Per-cell elastic extension of the fiber trace into the gel boxes.

    The gel spans the full thickness by default, so the cap values are first
    lifted from the cap-edge trace by a 2D harmonic solve; affine fields are
    then reproduced exactly by the interior elastic solve.  All cells share
    one factorization (congruent gel boxes) and are solved batched.
    """
    from scipy.linalg import lu_factor, lu_solve

    from .fem import elements as el

    U = np.asarray(U, dtype=float).reshape(-1, 3)
    W = U.copy()
    tpl = mesh.gel_local_template
    if len(tpl) == 0:
        return W
    _, on_cap, interior, full_span = _gel_template_partition(mesh)
    li, lj, lk = tpl.T
    gi, gj, gk = np.unique(li), np.unique(lj), np.unique(lk)
    gnx, gny, gnz = len(gi) - 1, len(gj) - 1, len(gk) - 1
    h = float(mesh.spacing[0])
    n_cells = mesh.total_cells

    nodes_per_cell = np.stack([mesh.cell_gel_nodes(c) for c in range(n_cells)])
    vals = W[nodes_per_cell].copy()  # (nc, ntpl, 3)
    tpl_index = {tuple(t): i for i, t in enumerate(tpl)}

    if full_span and np.any(on_cap) and gnx > 1 and gny > 1:
        # bilinear Laplace lift of the cap-edge trace, per cap and component
        N2, dN2, w2, _ = el.quad_qp_data((h, h))
        ke2 = np.einsum("q,qai,qbi->ab", w2, dN2, dN2)
        nn2 = (gnx + 1) * (gny + 1)
        ii, jj = np.meshgrid(np.arange(gnx + 1), np.arange(gny + 1), indexing="ij")
        flat = (ii + (gnx + 1) * jj).ravel()
        conn2 = np.array([
            [a + (gnx + 1) * b, a + 1 + (gnx + 1) * b, a + 1 + (gnx + 1) * (b + 1), a + (gnx + 1) * (b + 1)]
            for b in range(gny) for a in range(gnx)
        ])
        rows = np.repeat(conn2, 4, axis=1).ravel()
        cols = np.tile(conn2, (1, 4)).ravel()
        K2 = sp.coo_matrix((np.broadcast_to(ke2, (len(conn2), 4, 4)).ravel(), (rows, cols)),
                           shape=(nn2, nn2)).tocsr()
        edge = ((ii == 0) | (ii == gnx) | (jj == 0) | (jj == gny)).ravel()
        edge_flat, int_flat = flat[edge], flat[~edge]
        lu2 = lu_factor(K2[int_flat][:, int_flat].toarray())
        K_ib = K2[int_flat][:, edge_flat].toarray()
        for kcap in (gk[0], gk[-1]):
            cap_tpl = np.array([tpl_index[(a, b, kcap)] for b in gj for a in gi])
            cap_vals = vals[:, cap_tpl, :]  # (nc, nn2, 3), flat 2D node order
            bdry = cap_vals[:, edge_flat, :].reshape(n_cells, -1, 3)
            rhs = -np.einsum("ib,cbm->icm", K_ib, bdry).reshape(len(int_flat), -1)
            sol = lu_solve(lu2, rhs).reshape(len(int_flat), n_cells, 3)
            cap_vals[:, int_flat, :] = sol.transpose(1, 0, 2)
            vals[:, cap_tpl, :] = cap_vals

    # 3D homogeneous elastic solve on the gel interior, Dirichlet walls + caps
    gel_grid = _StructuredHexMesh((gnx, gny, gnz), origin=(0.0, 0.0, 0.0), spacing=(h, h, h))
    keg = el.hex_elastic_ke((h, h, h), hooke.gel)
    dofs3 = fem.vector_dofs(gel_grid.elems)
    K3 = fem.assembly.scatter(dofs3, lambda idx: np.broadcast_to(keg, (len(idx), 24, 24)),
                              3 * gel_grid.n_nodes)
    loc_of_tpl = (li - gi[0]) + (gnx + 1) * ((lj - gj[0]) + (gny + 1) * (lk - gk[0]))
    int_dofs = (3 * loc_of_tpl[interior][:, None] + np.arange(3)).ravel()
    bnd_dofs = (3 * loc_of_tpl[~interior][:, None] + np.arange(3)).ravel()
    if len(int_dofs):
        lu3 = lu_factor(K3[int_dofs][:, int_dofs].toarray())
        K_ib = K3[int_dofs][:, bnd_dofs].toarray()
        bvals = vals[:, ~interior, :].reshape(n_cells, -1)
        sol = lu_solve(lu3, -(K_ib @ bvals.T))  # (n_int_dofs, nc)
        vals[:, interior, :] = sol.T.reshape(n_cells, -1, 3)

    W[nodes_per_cell.ravel()] = vals.reshape(-1, 3)
    return W


def decompose_state(U: np.ndarray, mesh: MicroMesh, hooke: HookeTensor,
                    eps: float, p: np.ndarray | None = None) -> DecompositionReport:
    """Extension + Griso + complementary decomposition with the norm table."""
    U = np.asarray(U, dtype=float).reshape(-1, 3)
    w_eps = extend_fiber(U, mesh, hooke)
    u_eps = U - w_eps
    rep = griso_decompose(w_eps.reshape(-1), mesh, eps)
    U_mid = thickness_average(mesh, u_eps)
    _, nlay, _ = _thickness_ops(mesh)
    ubar = u_eps - np.tile(U_mid, (nlay, 1))
    rep.U_mid = U_mid
    rep.ubar = ubar
    rep.norms = _estimate_table(mesh, eps, u_eps, rep, U_mid, ubar)
    if p is not None:
        gel_mask = mesh.phase == GEL
        Mp = fem.assemble_scalar_mass(mesh, elems_mask=gel_mask, nodes=mesh.gel_nodes)
        Dp = fem.assemble_scalar_diffusion(mesh, np.eye(3), elems_mask=gel_mask,
                                           nodes=mesh.gel_nodes)
        rep.norms["p"] = float(np.sqrt(max(p @ (Mp @ p), 0.0))) + eps * float(
            np.sqrt(max(p @ (Dp @ p), 0.0)))
    return rep


def _mid_surface_forms(mesh: MicroMesh):
    """Bilinear mass/stiffness on the in-plane node grid of the micro mesh."""
    from .fem import elements as el

    nx, ny = mesh.grid.nelems[0], mesh.grid.nelems[1]
    hx, hy = mesh.spacing[0], mesh.spacing[1]
    N, dN, w, _ = el.quad_qp_data((hx, hy))
    me = np.einsum("q,qa,qb->ab", w, N, N)
    ke = np.einsum("q,qai,qbi->ab", w, dN, dN)
    conn = np.array([
        [a + (nx + 1) * b, a + 1 + (nx + 1) * b, a + 1 + (nx + 1) * (b + 1), a + (nx + 1) * (b + 1)]
        for b in range(ny) for a in range(nx)
    ])
    n = (nx + 1) * (ny + 1)
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    M = sp.coo_matrix((np.broadcast_to(me, (len(conn), 4, 4)).ravel(), (rows, cols)),
                      shape=(n, n)).tocsr()
    K = sp.coo_matrix((np.broadcast_to(ke, (len(conn), 4, 4)).ravel(), (rows, cols)),
                      shape=(n, n)).tocsr()
    return M, K


def _estimate_table(mesh: MicroMesh, eps: float, u_eps, rep, U_mid, ubar) -> dict:
    """Discrete left-hand sides of the scale-explicit estimate table."""
    E = fem.assemble_strain_product(mesh)
    G = fem.assemble_vector_gradient_product(mesh)
    Mm = fem.assemble_scalar_mass(mesh)
    M2, K2 = _mid_surface_forms(mesh)

    def energy(Q, v):
        v = v.reshape(-1)
        return float(np.sqrt(max(v @ (Q @ v), 0.0)))

    def l2_3d(v):
        return float(np.sqrt(max(sum(v[:, c] @ (Mm @ v[:, c]) for c in range(3)), 0.0)))

    def l2_2d(f):
        return float(np.sqrt(max(sum(f[:, c] @ (M2 @ f[:, c]) for c in range(f.shape[1])), 0.0)))

    def h1_2d(f):
        return float(np.sqrt(max(sum(
            f[:, c] @ (M2 @ f[:, c]) + f[:, c] @ (K2 @ f[:, c]) for c in range(f.shape[1])), 0.0)))

    W, R, wbar = rep.W, rep.R, rep.wbar
    grad2 = lambda f: float(np.sqrt(max(sum(f[:, c] @ (K2 @ f[:, c]) for c in range(f.shape[1])), 0.0)))
    return {
        "e_u": energy(E, u_eps),
        "U_mid": l2_2d(U_mid) + eps * grad2(U_mid),
        "ubar": l2_3d(ubar) + eps * energy(G, ubar),
        "W_membrane": h1_2d(W[:, :2]),
        "W3_R": eps * (h1_2d(W[:, 2:3]) + h1_2d(R)),
        "kl_defect": _kl_defect(mesh, M2, W, R),
        "wbar": l2_3d(wbar) + eps * energy(G, wbar),
    }


def _kl_defect(mesh: MicroMesh, M2, W, R) -> float:
    """|| grad W3 + R ||_{L2(omega)} via nodal finite differences on the grid."""
    nx, ny = mesh.grid.nelems[0], mesh.grid.nelems[1]
    hx, hy = mesh.spacing[0], mesh.spacing[1]
    W3 = W[:, 2].reshape(ny + 1, nx + 1).T  # [i, j]
    gx = np.gradient(W3, hx, axis=0)
    gy = np.gradient(W3, hy, axis=1)
    d = np.stack([gx.T.reshape(-1) + R[:, 0], gy.T.reshape(-1) + R[:, 1]], axis=-1)
    return float(np.sqrt(sum(d[:, c] @ (M2 @ d[:, c]) for c in range(2))))
