import numpy as np
import pytest
import scipy.sparse as sp

from poroplate import fem
from poroplate.errors import ConstraintError, MaterialError, SolverError
from poroplate.fem import elements as el
from poroplate.fem.constraints import ConstraintSet, Reducer
from poroplate.fem.solvers import DenseFactor, RepeatedBlockSolver, pcg, solve_saddle, solve_spd
from poroplate.geometry import GEL, CellGeometry, build_cell_mesh
from poroplate.material import HookeTensor, isotropic


# --------------------------------------------------------------- hex kernels

def test_stiffness_rigid_translations():
    ke = el.hex_elastic_ke((1.0, 1.0, 1.0), isotropic(1.0, 0.0))
    assert np.abs(ke.sum(axis=1)).max() < 1e-12


def test_stiffness_rigid_rotation():
    ke = el.hex_elastic_ke((1.0, 1.0, 1.0), isotropic(1.0, 0.3))
    nodes = np.array([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                      (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)], dtype=float)
    r = np.cross([0.0, 0.0, 1.0], nodes).reshape(-1)
    assert np.abs(ke @ r).max() < 1e-10


def test_uniaxial_patch_test(homogeneous_hooke):
    # linear displacement on a 2x2x2 block of hexes is reproduced exactly
    from poroplate.geometry import _StructuredHexMesh

    grid = _StructuredHexMesh((2, 2, 2), origin=(0, 0, 0), spacing=(0.5, 0.5, 0.5))

    class M:
        nodes = grid.nodes
        elems = grid.elems
        spacing = grid.spacing
        phase = np.zeros(grid.n_elems, dtype=np.uint8)
        n_nodes = grid.n_nodes

    K = fem.assemble_elastic_stiffness(M, homogeneous_hooke)
    S = np.array([[0.1, 0.02, 0.0], [0.02, -0.05, 0.01], [0.0, 0.01, 0.03]])
    u_exact = (grid.nodes @ S.T).reshape(-1)
    # fix the boundary nodes to the exact values, solve the interior
    on_bnd = (np.isclose(grid.nodes, 0.0) | np.isclose(grid.nodes, 1.0)).any(axis=1)
    bdofs = (3 * np.flatnonzero(on_bnd)[:, None] + np.arange(3)).ravel()
    cons = ConstraintSet(ndof=3 * grid.n_nodes, dirichlet_dofs=bdofs,
                         dirichlet_values=u_exact[bdofs])
    u = solve_spd(K, np.zeros(3 * grid.n_nodes), cons, tol=1e-13)
    assert np.abs(u - u_exact).max() < 1e-10


def test_mass_row_sums_and_total(cell_mesh4):
    M = fem.assemble_scalar_mass(cell_mesh4)
    assert M.sum() == pytest.approx(cell_mesh4.volume, rel=1e-12)
    # row sums = int phi_i; interior node of the uniform grid gets h^3
    w = np.asarray(M.sum(axis=1)).ravel()
    h = cell_mesh4.spacing[0]
    interior = np.all((cell_mesh4.nodes[:, :2] > 0.01) & (cell_mesh4.nodes[:, :2] < 0.99), axis=1)
    interior &= (cell_mesh4.nodes[:, 2] > -0.99) & (cell_mesh4.nodes[:, 2] < 0.99)
    assert np.allclose(w[interior], h**3, rtol=1e-12)


def test_diffusion_constants_in_kernel(cell_mesh4):
    D = fem.assemble_scalar_diffusion(cell_mesh4, np.eye(3))
    ones = np.ones(cell_mesh4.n_nodes)
    assert np.abs(D @ ones).max() < 1e-12


def test_diffusion_linear_field_energy(cell_mesh4):
    D = fem.assemble_scalar_diffusion(cell_mesh4, np.eye(3))
    p = cell_mesh4.nodes[:, 0]
    assert p @ (D @ p) == pytest.approx(cell_mesh4.volume, rel=1e-12)


def test_diffusion_anisotropic_energy(cell_mesh4):
    # K = diag(1,2,4), p = x1+x2+x3: energy = (1+2+4) * |Ycell|
    D = fem.assemble_scalar_diffusion(cell_mesh4, np.diag([1.0, 2.0, 4.0]))
    p = cell_mesh4.nodes.sum(axis=1)
    assert p @ (D @ p) == pytest.approx(7.0 * cell_mesh4.volume, rel=1e-12)


def test_diffusion_rejects_non_spd(cell_mesh4):
    with pytest.raises(MaterialError):
        fem.assemble_scalar_diffusion(cell_mesh4, np.diag([1.0, -1.0, 1.0]))


def test_non_coercive_tensor_refused(cell_mesh4):
    bad = HookeTensor(np.zeros((6, 6)), np.zeros((6, 6)))
    with pytest.raises(MaterialError):
        fem.assemble_elastic_stiffness(cell_mesh4, bad)


# ------------------------------------------------------- divergence coupling

def test_divergence_identity_field(cell_mesh4):
    # v(x) = x has div v = 3: 1^T C v = 3 |gel|
    C = fem.assemble_divergence_coupling(cell_mesh4, gel_nodes=cell_mesh4.gel_nodes())
    v = cell_mesh4.nodes.reshape(-1)
    gel_vol = (cell_mesh4.phase == GEL).sum() * cell_mesh4.grid.elem_volume
    assert np.ones(C.shape[0]) @ (C @ v) == pytest.approx(3.0 * gel_vol, rel=1e-12)


def test_divergence_rigid_translation(cell_mesh4):
    C = fem.assemble_divergence_coupling(cell_mesh4, gel_nodes=cell_mesh4.gel_nodes())
    v = np.tile([1.0, -2.0, 0.5], cell_mesh4.n_nodes)
    assert np.abs(C @ v).max() < 1e-13


def test_divergence_theorem_facet_oracle(cell_mesh4):
    # independent oracle: 1^T C v equals the boundary flux over the gel
    # boundary, computed by 2x2 Gauss facet quadrature on the interface plus
    # the gel top/bottom caps
    mesh = cell_mesh4
    rng = np.random.default_rng(3)
    v = rng.standard_normal((mesh.n_nodes, 3))
    C = fem.assemble_divergence_coupling(mesh, gel_nodes=mesh.gel_nodes())
    lhs = np.ones(C.shape[0]) @ (C @ v.reshape(-1))

    gq = np.array([-1.0, 1.0]) / np.sqrt(3.0)

    def face_flux(nodes_xyz, vals, normal):
        # bilinear quad with vertices in cyclic order
        flux = 0.0
        for a in gq:
            for b in gq:
                N = 0.25 * np.array([(1 - a) * (1 - b), (1 + a) * (1 - b),
                                     (1 + a) * (1 + b), (1 - a) * (1 + b)])
                dxa = nodes_xyz.T @ (0.25 * np.array([-(1 - b), (1 - b), (1 + b), -(1 + b)]))
                dxb = nodes_xyz.T @ (0.25 * np.array([-(1 - a), -(1 + a), (1 + a), (1 - a)]))
                area = np.linalg.norm(np.cross(dxa, dxb))
                flux += area * float((N @ vals) @ normal)
        return flux

    total = 0.0
    for face, nrm in zip(mesh.interface_faces, mesh.interface_normals):
        total += face_flux(mesh.nodes[face], v[face], nrm)
    # gel caps on the plate surfaces (full-span gel): z = +-1 faces of gel elems
    idx = mesh.grid.elem_grid_indices()
    nz = mesh.grid.nelems[2]
    for e in np.flatnonzero(mesh.phase == GEL):
        i, j, k = idx[e]
        for k_face, sign in ((0, -1.0), (nz - 1, 1.0)):
            if k != k_face:
                continue
            kk = k if sign < 0 else k + 1
            face = [mesh.grid.node_id(i, j, kk), mesh.grid.node_id(i + 1, j, kk),
                    mesh.grid.node_id(i + 1, j + 1, kk), mesh.grid.node_id(i, j + 1, kk)]
            total += face_flux(mesh.nodes[face], v[face], np.array([0.0, 0.0, sign]))
    assert lhs == pytest.approx(total, rel=1e-10)


# ------------------------------------------------------------------ solvers

def test_solve_spd_identity():
    A = sp.eye(10, format="csr")
    b = np.arange(10.0)
    assert np.allclose(solve_spd(A, b), b)


def test_solve_spd_poisson_closed_form():
    # -u'' = 1 on (0,1), u(0)=u(1)=0, 5 interior points, h=1/6:
    # exact nodal values of the parabola x(1-x)/2 (FD solution is exact)
    n = 5
    h = 1.0 / 6.0
    main = 2.0 * np.ones(n)
    off = -np.ones(n - 1)
    A = sp.diags([off, main, off], [-1, 0, 1], format="csr") / h**2
    b = np.ones(n)
    x = solve_spd(A, b, tol=1e-14)
    xs = h * np.arange(1, n + 1)
    assert np.allclose(x, xs * (1 - xs) / 2.0, atol=1e-12)


def test_solver_error_carries_history():
    n = 30
    A = sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1],
                 format="csr")
    with pytest.raises(SolverError) as err:
        pcg(A, np.ones(n), tol=1e-30, maxiter=3)
    assert len(err.value.residuals) >= 3


def test_inconsistent_dirichlet_errors():
    with pytest.raises(ConstraintError):
        ConstraintSet(ndof=4, dirichlet_dofs=[1, 1], dirichlet_values=[0.0, 1.0])


def test_dof_in_two_constraint_kinds_errors():
    with pytest.raises(ConstraintError):
        ConstraintSet(ndof=4, dirichlet_dofs=[1], dirichlet_values=[0.0],
                      periodic_slaves=[1], periodic_masters=[0])


def test_periodic_chain_resolution():
    # 3 -> 2 -> 0 resolves to the root without cycling
    cons = ConstraintSet(ndof=4, periodic_slaves=[3, 2], periodic_masters=[2, 0])
    red = Reducer(cons)
    x = red.expand(np.array([5.0, 7.0]))
    assert np.allclose(x, [5.0, 7.0, 5.0, 5.0])


def test_reduction_preserves_symmetry(cell_mesh4, two_phase_hooke):
    from poroplate.cell import cell_constraints

    K = fem.assemble_elastic_stiffness(cell_mesh4, two_phase_hooke)
    red = Reducer(cell_constraints(cell_mesh4))
    Kr = red.reduce_matrix(K)
    d = (Kr - Kr.T)
    assert np.abs(d.data).max() if d.nnz else 0.0 < 1e-12 * np.abs(Kr.data).max()


def test_saddle_decoupled_matches_spd():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((8, 8))
    K = sp.csr_matrix(A @ A.T + 8 * np.eye(8))
    M = sp.csr_matrix(np.eye(3))
    C = sp.csr_matrix((3, 8))
    bu, bp = rng.standard_normal(8), rng.standard_normal(3)
    u, p = solve_saddle(K, C, M, (bu, bp), tol=1e-13)
    assert np.allclose(u, solve_spd(K, bu, tol=1e-13), atol=1e-10)
    assert np.allclose(p, bp)


def test_saddle_hand_built_2x2():
    # [2, -1; 1, 3] with K=2, C=1, M=3: u = (bu*3 + bp)/(2*3+1)
    K = sp.csr_matrix(np.array([[2.0]]))
    C = sp.csr_matrix(np.array([[1.0]]))
    M = sp.csr_matrix(np.array([[3.0]]))
    u, p = solve_saddle(K, C, M, (np.array([1.0]), np.array([2.0])), tol=1e-14)
    assert u[0] == pytest.approx(5.0 / 7.0, rel=1e-10)
    assert p[0] == pytest.approx((2.0 - 5.0 / 7.0) / 3.0, rel=1e-10)


def test_saddle_random_vs_dense_oracle():
    rng = np.random.default_rng(7)
    nu, npp = 12, 5
    A = rng.standard_normal((nu, nu))
    K = A @ A.T + nu * np.eye(nu)
    B = rng.standard_normal((npp, npp))
    M = B @ B.T + npp * np.eye(npp)
    C = rng.standard_normal((npp, nu))
    bu, bp = rng.standard_normal(nu), rng.standard_normal(npp)
    mono = np.block([[K, -C.T], [C, M]])
    ref = np.linalg.solve(mono, np.concatenate([bu, bp]))
    u, p = solve_saddle(sp.csr_matrix(K), sp.csr_matrix(C), sp.csr_matrix(M),
                        (bu, bp), tol=1e-13)
    assert np.abs(np.concatenate([u, p]) - ref).max() < 1e-8


def test_repeated_block_solver():
    rng = np.random.default_rng(2)
    S = rng.standard_normal((4, 4))
    S = S @ S.T + 4 * np.eye(4)
    solver = RepeatedBlockSolver(S, 3)
    x = rng.standard_normal(12)
    y = solver.solve(x)
    for b in range(3):
        assert np.allclose(S @ y[4 * b:4 * (b + 1)], x[4 * b:4 * (b + 1)], atol=1e-12)


def test_dense_factor_singular():
    with pytest.raises(SolverError):
        DenseFactor(np.zeros((3, 3)))


# ---------------------------------------------------------------- C1 element

def test_bfs_patch_test_quadratic():
    """Clamp the boundary dofs to a quadratic and recover it exactly."""
    from poroplate.geometry import build_plate_mesh
    from poroplate.plate import build_plate_space

    plate = build_plate_mesh(((0.0, 1.0), (0.0, 1.0)), 4)
    space = build_plate_space(plate)

    def w(x, y):
        return 0.3 * x**2 - 0.1 * x * y + 0.2 * y**2 + 0.5 * x - y + 0.25

    def wx(x, y):
        return 0.6 * x - 0.1 * y + 0.5

    def wy(x, y):
        return -0.1 * x + 0.4 * y - 1.0

    nodes = plate.nodes
    exact = np.stack([w(nodes[:, 0], nodes[:, 1]), wx(nodes[:, 0], nodes[:, 1]),
                      wy(nodes[:, 0], nodes[:, 1]),
                      np.full(len(nodes), -0.1)], axis=-1)
    # assemble the bending stiffness with an isotropic-ish tensor
    c = np.array([[1.0, 0.3, 0.0], [0.3, 1.0, 0.0], [0.0, 0.0, 0.35]])
    nn = plate.n_nodes
    Kb = np.zeros((4 * nn, 4 * nn))
    loc = np.einsum("q,qia,ij,qjb->ab", space.qp_w, space.B_bend, c, space.B_bend)
    for conn in plate.quads:
        dofs = (4 * conn[:, None] + np.arange(4)).ravel()
        Kb[np.ix_(dofs, dofs)] += loc
    free = np.ones(4 * nn, dtype=bool)
    bdofs = (4 * plate.boundary_nodes[:, None] + np.arange(4)).ravel()
    free[bdofs] = False
    xfull = np.zeros(4 * nn)
    xfull[bdofs] = exact.reshape(-1)[bdofs]
    rhs = -Kb[np.ix_(free, ~free)] @ xfull[~free]
    xfull[free] = np.linalg.solve(Kb[np.ix_(free, free)], rhs)
    assert np.abs(xfull - exact.reshape(-1)).max() < 1e-10


def test_bfs_interpolates_bicubic_exactly():
    from poroplate.fem.elements import bfs_basis

    hx, hy = 0.5, 0.25

    def w(x, y):
        return (1 + x + x**2 + x**3) * (2 - y + y**3)

    def wx(x, y):
        return (1 + 2 * x + 3 * x**2) * (2 - y + y**3)

    def wy(x, y):
        return (1 + x + x**2 + x**3) * (-1 + 3 * y**2)

    def wxy(x, y):
        return (1 + 2 * x + 3 * x**2) * (-1 + 3 * y**2)

    corners = [(0.0, 0.0), (hx, 0.0), (hx, hy), (0.0, hy)]
    dofs = []
    for cx, cy in corners:
        dofs += [w(cx, cy), wx(cx, cy), wy(cx, cy), wxy(cx, cy)]
    dofs = np.array(dofs)
    pts = np.random.default_rng(0).uniform(0.0, 1.0, size=(20, 2))
    vals = bfs_basis((hx, hy), pts, (0, 0)) @ dofs
    exact = w(pts[:, 0] * hx, pts[:, 1] * hy)
    assert np.abs(vals - exact).max() < 1e-12
    d2 = bfs_basis((hx, hy), pts, (2, 0)) @ dofs
    exact2 = (2 + 6 * pts[:, 0] * hx) * (2 - pts[:, 1] * hy + (pts[:, 1] * hy) ** 3)
    assert np.abs(d2 - exact2).max() < 1e-11
