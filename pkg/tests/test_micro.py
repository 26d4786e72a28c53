import numpy as np
import pytest
import scipy.sparse.linalg as spla

from poroplate import fem, micro
from poroplate.geometry import CellGeometry, build_micro_mesh
from poroplate.material import BiotParams, LoadSpec, Poly2T


@pytest.fixture(scope="module")
def small_system(micro_mesh4, two_phase_hooke, biot, ramp_loads):
    return micro.assemble_micro(micro_mesh4, two_phase_hooke, biot, 0.25, ramp_loads)


def test_zero_data_uniqueness(micro_mesh4, two_phase_hooke, biot):
    sys0 = micro.assemble_micro(micro_mesh4, two_phase_hooke, biot, 0.25, LoadSpec())
    traj = micro.run_transient(sys0, 1.0, 4)
    assert max(r["e_U"] for r in traj.table) == 0.0
    assert max(r["p"] for r in traj.table) == 0.0


def test_constant_pressure_in_diffusion_kernel(small_system):
    # one gel component's indicator lies in ker(D) (no-flux Neumann per cell)
    sys = small_system
    ng = sys.mesh.n_gel_local
    z = np.zeros(sys.n_p)
    z[:ng] = 1.0
    assert np.abs(sys.D @ z).max() < 1e-14


def test_diffusion_eps_scaling(micro_mesh4, two_phase_hooke, biot, ramp_loads):
    sys = micro.assemble_micro(micro_mesh4, two_phase_hooke, biot, 0.25, ramp_loads)
    D_unscaled = fem.assemble_scalar_diffusion(
        micro_mesh4, biot.K, elems_mask=micro_mesh4.phase == 1, nodes=micro_mesh4.gel_nodes)
    diff = sys.D - 0.25**2 * D_unscaled
    assert np.abs(diff.data).max() < 1e-14 if diff.nnz else True


def test_two_path_equivalence(small_system):
    tr1 = micro.run_transient(small_system, 0.5, 8, stepper="monolithic")
    tr2 = micro.run_transient(small_system, 0.5, 8, stepper="schur")
    for a, b in zip(tr1.table[1:], tr2.table[1:]):
        assert abs(a["p"] - b["p"]) <= 1e-7 * max(b["p"], 1e-30)
        assert abs(a["e_U"] - b["e_U"]) <= 1e-7 * max(b["e_U"], 1e-30)
    assert np.linalg.norm(tr1.final.U - tr2.final.U) <= 1e-7 * np.linalg.norm(tr2.final.U)


def test_alpha_zero_decoupled_oracle(micro_mesh4, two_phase_hooke, ramp_loads):
    # displacement = static elastic solve at each t; pressure evolves by an
    # independent sparse-LU integration of (cM + dtD) p1 = dt G + cM p0
    biot0 = BiotParams(c=1.0, alpha=0.0, K=np.eye(3))
    sys = micro.assemble_micro(micro_mesh4, two_phase_hooke, biot0, 0.25, ramp_loads)
    assert sys.decoupled
    T, nsteps = 0.5, 4
    traj = micro.run_transient(sys, T, nsteps)
    dt = T / nsteps
    # oracle: independent recursion with scipy's direct solver
    S = (sys.biot.c * sys.M + dt * sys.D).tocsc()
    p = np.zeros(sys.n_p)
    for k in range(1, nsteps + 1):
        p = spla.spsolve(S, dt * sys.G(k * dt) + sys.biot.c * (sys.M @ p))
    assert np.abs(p - traj.final.p).max() < 1e-9 * max(np.abs(p).max(), 1e-30)
    u_static = fem.solve_spd(sys.B, sys.F(T), tol=1e-12)
    assert np.linalg.norm(traj.final.U_red - u_static) < 1e-8 * np.linalg.norm(u_static)
    # the reduced-ODE path degenerates to c db/dt + D b = G and must agree
    traj_s = micro.run_transient(sys, T, nsteps, stepper="schur")
    assert np.abs(traj_s.final.p - traj.final.p).max() < 1e-9 * max(np.abs(p).max(), 1e-30)


def test_constant_force_no_source_keeps_pressure_zero(micro_mesh4, two_phase_hooke, biot):
    # G = 0 and F constant in t: db/dt is driven only by -D b, and from zero
    # initial pressure the trajectory stays zero while U sits at the static solve
    loads = LoadSpec(f1=Poly2T.constant(1.0))
    sys = micro.assemble_micro(micro_mesh4, two_phase_hooke, biot, 0.25, loads)
    traj = micro.run_transient(sys, 0.5, 4, stepper="schur")
    assert max(r["p"] for r in traj.table) < 1e-12
    u_static = fem.solve_spd(sys.B, sys.F(0.5), tol=1e-12)
    assert np.linalg.norm(traj.final.U_red - u_static) < 1e-8 * np.linalg.norm(u_static)


def test_step_consistency_richardson(small_system):
    # one step vs two half-steps differ at O(dt^2): halving dt quarters the gap
    sys = small_system
    state0 = micro.initial_state(sys)

    def gap(dt):
        s1 = micro.step_monolithic(sys, state0, dt, tol=1e-12)
        sh = micro.step_monolithic(sys, state0, dt / 2, tol=1e-12)
        s2 = micro.step_monolithic(sys, sh, dt / 2, tol=1e-12)
        du = (s1.U - s2.U).reshape(-1)
        return np.sqrt(du @ (sys.strain_sq @ du) + (s1.p - s2.p) @ (sys.M @ (s1.p - s2.p)))

    g1, g2 = gap(0.2), gap(0.1)
    assert 2.5 <= g1 / g2 <= 6.0


def test_linearity_in_loads(micro_mesh4, two_phase_hooke, biot, ramp_loads):
    sys1 = micro.assemble_micro(micro_mesh4, two_phase_hooke, biot, 0.25, ramp_loads)
    doubled = LoadSpec(f1=Poly2T([(1.0, 0, 0, 1)]), f3=Poly2T([(2.0, 0, 0, 1)]),
                       h=Poly2T([(2.0, 0, 0, 1)]))
    sys2 = micro.assemble_micro(micro_mesh4, two_phase_hooke, biot, 0.25, doubled)
    t1 = micro.run_transient(sys1, 0.25, 2)
    t2 = micro.run_transient(sys2, 0.25, 2)
    for a, b in zip(t1.table[1:], t2.table[1:]):
        assert b["e_U"] == pytest.approx(2.0 * a["e_U"], rel=1e-8)
        assert b["p"] == pytest.approx(2.0 * a["p"], rel=1e-8)


def test_energy_dissipation_inequality(small_system):
    # discrete energy estimate: E(tn) + 2 sum dt K-energy <= 2 sum (dt<G,p> + <F,dU>)
    sys = small_system
    T, nsteps = 0.5, 8
    traj = micro.run_transient(sys, T, nsteps)
    dt = T / nsteps
    lhs = traj.table[-1]["energy"]
    rhs = 0.0
    for k in range(1, nsteps + 1):
        st, prev = traj.states[k], traj.states[k - 1]
        lhs += 2.0 * dt * float(st.p @ (sys.D @ st.p))
        rhs += 2.0 * dt * float(sys.G(st.t) @ st.p)
        rhs += 2.0 * float(sys.F(st.t) @ (st.U_red - prev.U_red))
    assert lhs <= rhs + 1e-12 + 0.1 * abs(rhs)


def test_energy_decay_after_cutoff(micro_mesh4, two_phase_hooke, biot):
    loads = LoadSpec(f3=Poly2T([(1.0, 0, 0, 1)], t_off=0.25),
                     h=Poly2T([(1.0, 0, 0, 1)], t_off=0.25))
    sys = micro.assemble_micro(micro_mesh4, two_phase_hooke, biot, 0.25, loads)
    traj = micro.run_transient(sys, 1.0, 16)
    E = [r["energy"] for r in traj.table]
    k0 = 5  # first step fully after the cutoff
    assert all(E[i + 1] <= E[i] * (1 + 1e-12) for i in range(k0, 16))


def test_korn_ratio_stable_under_refinement(default_geom, two_phase_hooke, biot, ramp_loads):
    vals = {}
    for n in (4, 8):
        mesh = build_micro_mesh(default_geom, 0.25, ((0.0, 1.0), (0.0, 1.0)), n)
        sys = micro.assemble_micro(mesh, two_phase_hooke, biot, 0.25, ramp_loads)
        traj = micro.run_transient(sys, 0.25, 2)
        vals[n] = traj.korn_constant(0.25)
    assert vals[4] > 0 and vals[8] > 0
    assert vals[8] <= 2.0 * vals[4]


# --------------------------------------------------------- decomposition ops

def test_griso_rigid_translation(micro_mesh4):
    U = np.zeros((micro_mesh4.n_nodes, 3))
    U[:, 0], U[:, 1] = 1.0, -2.0
    rep = micro.griso_decompose(U, micro_mesh4, 0.25)
    assert np.abs(rep.W - [1.0, -2.0, 0.0]).max() < 1e-14
    assert np.abs(rep.R).max() < 1e-14
    assert np.abs(rep.wbar).max() < 1e-14


def test_griso_pure_rotation(micro_mesh4):
    X = micro_mesh4.nodes
    g = X[:, 0] + 2.0 * X[:, 1]
    U = np.zeros((micro_mesh4.n_nodes, 3))
    U[:, 0] = X[:, 2] * g
    rep = micro.griso_decompose(U, micro_mesh4, 0.25)
    ncol = (micro_mesh4.grid.nelems[0] + 1) * (micro_mesh4.grid.nelems[1] + 1)
    assert np.abs(rep.R[:, 0] - g[:ncol]).max() < 1e-12
    assert np.abs(rep.W).max() < 1e-13


def test_griso_kirchhoff_love(micro_mesh4):
    X = micro_mesh4.nodes
    phi = X[:, 0] ** 2 - 0.5 * X[:, 1] ** 2 + X[:, 0] * X[:, 1]
    d1 = 2 * X[:, 0] + X[:, 1]
    d2 = -X[:, 1] + X[:, 0]
    U = np.stack([-X[:, 2] * d1, -X[:, 2] * d2, phi], axis=-1)
    rep = micro.griso_decompose(U, micro_mesh4, 0.25)
    ncol = (micro_mesh4.grid.nelems[0] + 1) * (micro_mesh4.grid.nelems[1] + 1)
    assert np.abs(rep.wbar).max() < 1e-13
    assert np.abs(rep.R[:, 0] + d1[:ncol]).max() < 1e-12
    assert np.abs(rep.R[:, 1] + d2[:ncol]).max() < 1e-12
    assert rep.max_wbar_average < 1e-10


def test_wbar_thickness_average_vanishes(small_system):
    traj = micro.run_transient(small_system, 0.25, 2)
    rep = micro.griso_decompose(traj.final.U, small_system.mesh, 0.25)
    scale = max(np.abs(traj.final.U).max(), 1e-30)
    assert rep.max_wbar_average <= 1e-10 * scale


def test_extension_rigid_and_affine(micro_mesh4, two_phase_hooke):
    X = micro_mesh4.nodes
    # rigid motion: translation + linearized rotation
    U = np.tile([0.3, -0.2, 0.1], (micro_mesh4.n_nodes, 1)) + np.cross([0.1, -0.2, 0.3], X)
    W = micro.extend_fiber(U, micro_mesh4, two_phase_hooke)
    assert np.abs(W - U).max() < 1e-12
    # symmetric affine field
    S = np.array([[0.4, 0.1, 0.0], [0.1, -0.2, 0.3], [0.0, 0.3, 0.1]])
    U = X @ S.T
    W = micro.extend_fiber(U, micro_mesh4, two_phase_hooke)
    assert np.abs(W - U).max() < 1e-12
    rep = micro.decompose_state(U, micro_mesh4, two_phase_hooke, 0.25)
    assert np.abs(rep.ubar).max() < 1e-12
    assert rep.norms["e_u"] < 1e-12


def test_extension_energy_ratio_bounded(default_geom, two_phase_hooke):
    # random fiber data on a one-cell plate: ||e(w)|| <= C ||e(U)||_fiber with
    # a moderate constant over a sample survey
    mesh = build_micro_mesh(default_geom, 0.25, ((0.0, 0.25), (0.0, 0.25)), 4)
    E_all = fem.assemble_strain_product(mesh)
    E_fib = fem.assemble_strain_product(mesh, elems_mask=mesh.phase == 0)
    rng = np.random.default_rng(11)
    from poroplate.micro import _gel_template_partition

    _, on_cap, interior, _ = _gel_template_partition(mesh)
    inner = mesh.cell_gel_nodes(0)[interior | on_cap]
    ratios = []
    for _ in range(10):
        U = rng.standard_normal((mesh.n_nodes, 3))
        U[inner] = 0.0  # data lives on the fiber and the interface trace
        w = micro.extend_fiber(U, mesh, two_phase_hooke).reshape(-1)
        uf = U.reshape(-1)
        num = np.sqrt(w @ (E_all @ w))
        den = np.sqrt(uf @ (E_fib @ uf))
        ratios.append(num / den)
    assert max(ratios) < 50.0


def test_bad_eps_rejected(micro_mesh4, two_phase_hooke, biot):
    from poroplate.errors import AssemblyError

    with pytest.raises(AssemblyError):
        micro.assemble_micro(micro_mesh4, two_phase_hooke, biot, 0.5, LoadSpec())


def test_decomposition_norm_table(small_system, two_phase_hooke):
    # the scale-explicit estimate table on a computed trajectory, all rows finite
    traj = micro.run_transient(small_system, 0.25, 2)
    rep = micro.decompose_state(traj.final.U, small_system.mesh, two_phase_hooke,
                                0.25, p=traj.final.p)
    for key in ("e_u", "U_mid", "ubar", "W_membrane", "W3_R", "kl_defect", "wbar", "p"):
        assert key in rep.norms
        assert np.isfinite(rep.norms[key])
    # the gel residual vanishes on fiber and interface by construction
    fiber_mask = np.ones(small_system.mesh.n_nodes, dtype=bool)
    from poroplate.micro import _gel_template_partition

    _, on_cap, interior, _ = _gel_template_partition(small_system.mesh)
    for c in range(small_system.mesh.total_cells):
        inner = small_system.mesh.cell_gel_nodes(c)[interior | on_cap]
        fiber_mask[inner] = False
    u_eps = traj.final.U - micro.extend_fiber(traj.final.U, small_system.mesh,
                                              two_phase_hooke)
    assert np.abs(u_eps[fiber_mask]).max() == 0.0
