import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from isoshell.errors import (ConstraintConflict, SingularSystem,
                             UntaggedBoundary)
from isoshell.geometry import CellSpec, TriMesh
from isoshell.homogenize import run_homogenization
from isoshell.shellfea import (LOAD_CASES, Material, ShellModel,
                               _elastic_3x3, assemble_and_solve,
                               build_constraints, element_stiffness,
                               macroscopic_stress)

D = 2.0
L = 1.0


@pytest.fixture(scope="module")
def tri():
    return np.array([[0.0, 0.0, 0.0], [2.0, 0.3, 0.0], [0.7, 1.9, 0.0]])


class TestElementStiffness:
    def test_thickness_scaling_exact(self, tri, material):
        km1, kb1 = element_stiffness(tri, 0.05, material)
        km2, kb2 = element_stiffness(tri, 0.10, material)
        assert np.array_equal(km2, 2.0 * km1)
        assert np.allclose(kb2, 8.0 * kb1, rtol=1e-15, atol=0.0)

    def test_membrane_rank(self, tri, material):
        km, _ = element_stiffness(tri, 0.05, material)
        assert np.linalg.matrix_rank(km, tol=1e-9 * np.abs(km).max()) == 3

    def test_bending_zero_modes(self, tri, material):
        # eigen-decomposition oracle: exactly 3 zero-energy modes
        _, kb = element_stiffness(tri, 0.05, material)
        w = np.linalg.eigvalsh(kb)
        assert np.all(np.abs(w[:3]) < 1e-10 * w[-1])
        assert w[3] > 1e-6 * w[-1]

    def test_rotation_invariance(self, tri, material):
        km, kb = element_stiffness(tri, 0.05, material)
        q = Rotation.random(random_state=12).as_matrix()
        km2, kb2 = element_stiffness(tri @ q.T, 0.05, material)
        assert np.allclose(km, km2, atol=1e-12 * np.abs(km).max())
        assert np.allclose(kb, kb2, atol=1e-12 * np.abs(kb).max())

    @pytest.mark.parametrize("which", ["xx", "yy", "xy"])
    def test_constant_curvature_patch(self, tri, material, which):
        # the discrete-Kirchhoff triangle reproduces constant-curvature
        # states exactly; energy must match the closed form
        delta = 0.05
        _, kb = element_stiffness(tri, delta, material)
        xy = tri[:, :2]
        area = 0.5 * abs(np.cross(xy[1] - xy[0], xy[2] - xy[0]))
        fields = {
            "xx": (lambda x, y: 0.5 * x * x, lambda x, y: x, lambda x, y: 0.0,
                   (1.0, 0.0, 0.0)),
            "yy": (lambda x, y: 0.5 * y * y, lambda x, y: 0.0, lambda x, y: y,
                   (0.0, 1.0, 0.0)),
            "xy": (lambda x, y: x * y, lambda x, y: y, lambda x, y: x,
                   (0.0, 0.0, 2.0)),
        }
        wf, gx, gy, kappa = fields[which]
        u = np.zeros(9)
        for i, (x, y) in enumerate(xy):
            u[3 * i] = wf(x, y)
            u[3 * i + 1] = gy(x, y)      # rotation about x = dw/dy
            u[3 * i + 2] = -gx(x, y)     # rotation about y = -dw/dx
        d0 = material.E_s * delta ** 3 / (12 * (1 - material.nu_s ** 2))
        db = d0 * _elastic_3x3(material.nu_s)
        kappa = np.asarray(kappa)
        exact = 0.5 * kappa @ db @ kappa * area
        assert 0.5 * u @ kb @ u == pytest.approx(exact, rel=1e-12)

    def test_degenerate_rejected(self, material):
        from isoshell.errors import DegenerateElement
        collinear = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
        with pytest.raises(DegenerateElement):
            element_stiffness(collinear, 0.05, material)


class TestPinchedCylinder:
    def test_reference_deflection(self, material):
        # classic coupled membrane-bending benchmark; reference radial
        # deflection under the pinch load is 1.8245e-5
        R, Lc, t, E, nu, P = 300.0, 600.0, 3.0, 3e6, 0.3, 1.0
        import scipy.sparse.linalg as spla
        mat = Material(E, nu)
        n = 24
        xs = np.linspace(0, Lc / 2, n + 1)
        phis = np.linspace(0, np.pi / 2, n + 1)
        V = np.array([[x, R * np.sin(p), R * np.cos(p)]
                      for x in xs for p in phis])
        def vid(i, j):
            return i * (n + 1) + j
        T = []
        for i in range(n):
            for j in range(n):
                a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
                T += [[a, b, c], [a, c, d]]
        mesh = TriMesh(vertices=V, triangles=np.array(T), box_lo=V.min(0),
                       box_hi=V.max(0))
        model = ShellModel(mesh, mat, CellSpec(600.0, "eighth"))
        K = model.assemble(np.full(len(T), t))
        ndof = 6 * len(V)
        mask = np.zeros(ndof, bool)
        for node, (x, y, z) in enumerate(V):
            if abs(x) < 1e-9:
                mask[[6 * node, 6 * node + 4, 6 * node + 5]] = True
            if abs(y) < 1e-9:
                mask[[6 * node + 1, 6 * node + 3, 6 * node + 5]] = True
            if abs(z) < 1e-9:
                mask[[6 * node + 2, 6 * node + 3, 6 * node + 4]] = True
            if abs(x - Lc / 2) < 1e-9:
                mask[[6 * node + 1, 6 * node + 2]] = True
        f = np.zeros(ndof)
        f[6 * vid(0, 0) + 2] = -P / 4
        free = ~mask
        u = np.zeros(ndof)
        u[free] = spla.splu(K[free][:, free].tocsc()).solve(f[free])
        w = u[6 * vid(0, 0) + 2]
        assert w == pytest.approx(-1.8245e-5, rel=0.03)


class TestConstraints:
    def test_case_u_tables(self, iwp_eighth_16, eighth_spec):
        cs = build_constraints(iwp_eighth_16, LOAD_CASES["U"], eighth_spec)
        node = iwp_eighth_16.vertices_on("x0")[0]
        base = 6 * node
        # u_x = 0, ty = tz = 0; u_y, u_z, tx free
        assert cs.mask[base] and cs.values[base] == 0.0
        assert cs.mask[base + 4] and cs.mask[base + 5]
        tags = iwp_eighth_16.plane_tags[node]
        if tags == 1:   # only on x0: remaining DOFs free
            assert not cs.mask[base + 1] and not cs.mask[base + 2]
            assert not cs.mask[base + 3]
        end = iwp_eighth_16.vertices_on("x1")[0]
        assert cs.values[6 * end] == pytest.approx(L)   # unit strain forces u = L

    def test_case_s_tables(self, iwp_eighth_16, eighth_spec):
        cs = build_constraints(iwp_eighth_16, LOAD_CASES["S"], eighth_spec)
        z0 = [n for n in iwp_eighth_16.vertices_on("z0")
              if iwp_eighth_16.plane_tags[n] == 4]
        node = z0[0]
        base = 6 * node
        assert cs.mask[base + 2] and cs.values[base + 2] == 0.0   # u_z
        assert cs.mask[base + 3] and cs.mask[base + 4]            # tx, ty
        assert not cs.mask[base] and not cs.mask[base + 1]
        x0 = [n for n in iwp_eighth_16.vertices_on("x0")
              if iwp_eighth_16.plane_tags[n] == 1]
        base = 6 * x0[0]
        assert cs.mask[base + 1] and cs.mask[base + 2]            # u_y, u_z
        assert cs.mask[base + 3] and not cs.mask[base + 4]        # tx only
        x1 = [n for n in iwp_eighth_16.vertices_on("x1")
              if iwp_eighth_16.plane_tags[n] == 8]
        base = 6 * x1[0]
        assert cs.values[base + 1] == pytest.approx(L)            # u_y = gamma L

    def test_conflict_detected(self, iwp_eighth_16, eighth_spec):
        cs = build_constraints(iwp_eighth_16, LOAD_CASES["U"], eighth_spec)
        with pytest.raises(ConstraintConflict):
            cs.prescribe(np.array([6 * int(iwp_eighth_16.vertices_on("x1")[0])]),
                         0.5)

    def test_untagged_boundary(self, material):
        verts = np.array([[0.2, 0.2, 0.5], [0.8, 0.3, 0.5], [0.5, 0.9, 0.5]])
        mesh = TriMesh(vertices=verts, triangles=np.array([[0, 1, 2]]),
                       box_lo=np.zeros(3), box_hi=np.ones(3))
        with pytest.raises(UntaggedBoundary):
            build_constraints(mesh, LOAD_CASES["U"], CellSpec(2.0, "eighth"))


class TestSolve:
    def test_zero_prescription_zero_field(self, iwp_eighth_16, iwp_model_16,
                                          material, eighth_spec):
        cs = build_constraints(iwp_eighth_16, LOAD_CASES["U"], eighth_spec)
        cs.values[:] = 0.0
        sol = assemble_and_solve(iwp_eighth_16, D / 50, material, cs,
                                 spec=eighth_spec, check_condition=False)
        assert sol.e_total == pytest.approx(0.0, abs=1e-12)
        assert np.max(np.abs(sol.displacements)) < 1e-12
        assert np.allclose(macroscopic_stress(sol, iwp_eighth_16, eighth_spec),
                           0.0, atol=1e-12)

    def test_linearity_in_prescribed_values(self, iwp_eighth_16, material,
                                            eighth_spec):
        cs = build_constraints(iwp_eighth_16, LOAD_CASES["U"], eighth_spec)
        sol1 = assemble_and_solve(iwp_eighth_16, D / 50, material, cs,
                                  spec=eighth_spec, check_condition=False)
        cs2 = build_constraints(iwp_eighth_16, LOAD_CASES["U"], eighth_spec)
        cs2.values *= 2.0
        sol2 = assemble_and_solve(iwp_eighth_16, D / 50, material, cs2,
                                  spec=eighth_spec, check_condition=False)
        assert sol2.e_total == pytest.approx(4.0 * sol1.e_total, rel=1e-12)
        assert np.allclose(sol2.reactions, 2.0 * sol1.reactions,
                           rtol=1e-9, atol=1e-9 * np.abs(sol1.reactions).max())

    def test_energy_split_oracle(self, iwp_uniform_result_16, iwp_model_16):
        # independent element loop: e_total equals 1/2 u^T K u re-assembled
        delta = np.full(iwp_model_16.mesh.n_triangles, D / 50)
        for sol in iwp_uniform_result_16.solutions.values():
            u = sol.displacements.reshape(-1)
            K = iwp_model_16.assemble(delta)
            direct = 0.5 * float(u @ (K @ u))
            assert sol.e_total == pytest.approx(direct, rel=1e-10)
            assert np.all(sol.e_membrane >= 0.0)
            assert np.all(sol.e_bending >= 0.0)

    def test_work_identity(self, iwp_uniform_result_16):
        for sol in iwp_uniform_result_16.solutions.values():
            assert sol.e_total == pytest.approx(sol.prescribed_work, rel=1e-10)

    def test_energy_equals_stress_strain_work(self, iwp_uniform_result_16):
        for sol in iwp_uniform_result_16.solutions.values():
            sigma_dot_eps = float(np.dot(sol.sigma_macro, sol.case.strain))
            assert sol.e_total == pytest.approx(
                0.5 * sigma_dot_eps * sol.volume, rel=1e-8)

    def test_hill_macro_equals_micro(self, iwp_uniform_result_16):
        for sol in iwp_uniform_result_16.solutions.values():
            for c in range(6):
                macro, micro = sol.sigma_macro[c], sol.sigma_micro_avg[c]
                if sol.case.kind in ("U", "T") and c >= 3:
                    continue
                if sol.case.kind == "S" and c != 4:
                    continue
                if max(abs(macro), abs(micro)) < 1e-8:
                    continue
                assert macro == pytest.approx(micro, rel=1e-6)

    def test_hydrostatic_stress_is_isotropic(self, iwp_uniform_result_16):
        s = iwp_uniform_result_16.solutions["T"].sigma_macro
        assert s[0] == pytest.approx(s[1], rel=1e-6)
        assert s[1] == pytest.approx(s[2], rel=1e-6)

    def test_singular_without_constraints(self, iwp_eighth_16, material,
                                          eighth_spec):
        from isoshell.shellfea import ConstraintSet
        ndof = iwp_eighth_16.n_vertices * 6
        empty = ConstraintSet(mask=np.zeros(ndof, bool), values=np.zeros(ndof),
                              case=LOAD_CASES["U"])
        with pytest.raises(SingularSystem):
            assemble_and_solve(iwp_eighth_16, D / 50, material, empty,
                               spec=eighth_spec, check_condition=False)


class TestModelProperties:
    def test_six_rigid_modes(self, material):
        # small connected patch, unconstrained: exactly 6 near-zero modes
        from isoshell.geometry import mesh_fundamental_unit, preset_surface
        fund = mesh_fundamental_unit(preset_surface("iwp", D),
                                     CellSpec(D, "fundamental"), 10)
        model = ShellModel(fund, material, CellSpec(D, "eighth"))
        K = model.assemble(np.full(fund.n_triangles, D / 50)).toarray()
        w = np.abs(np.linalg.eigvalsh(K))
        w.sort()
        assert w[5] / w[6] < 1e-8

    def test_determinism(self, iwp_eighth_16, material, eighth_spec):
        delta = np.full(iwp_eighth_16.n_triangles, D / 50)
        runs = []
        for _ in range(2):
            model = ShellModel(iwp_eighth_16, material, eighth_spec)
            sols = model.solve_cases(delta, [LOAD_CASES[k] for k in "UTS"])
            runs.append([sols[k].e_total for k in "UTS"])
        assert runs[0] == runs[1]          # bit-identical

    def test_drilling_factor_insensitive(self, iwp_eighth_16, material,
                                         eighth_spec):
        import isoshell.shellfea as sf
        delta = np.full(iwp_eighth_16.n_triangles, D / 50)
        energies = []
        original = sf.DRILL_FACTOR
        try:
            for factor in (1e-6, 1e-5):
                sf.DRILL_FACTOR = factor
                model = ShellModel(iwp_eighth_16, material, eighth_spec)
                sols = model.solve_cases(delta, [LOAD_CASES["U"]])
                energies.append(sols["U"].e_total)
        finally:
            sf.DRILL_FACTOR = original
        assert energies[0] == pytest.approx(energies[1], rel=1e-6)

    @pytest.mark.parametrize("fixtures", [("iwp_eighth_32", "iwp_eighth_48"),
                                          ("n_eighth_32", "n_eighth_48"),
                                          ("frd_eighth_32", "frd_eighth_48")])
    def test_refinement_gate(self, fixtures, material, eighth_spec, request):
        # convergence gate: energies move < 1% from resolution r to 1.5r
        coarse = request.getfixturevalue(fixtures[0])
        fine = request.getfixturevalue(fixtures[1])
        for kind in "UTS":
            es = []
            for mesh in (coarse, fine):
                model = ShellModel(mesh, material, eighth_spec)
                sols = model.solve_cases(np.full(mesh.n_triangles, D / 50),
                                         [LOAD_CASES[kind]])
                es.append(sols[kind].e_total)
            assert abs(es[1] - es[0]) / es[0] < 0.01

    def test_thread_env_bit_exact(self, iwp_eighth_16, material, eighth_spec,
                                  monkeypatch):
        delta = np.full(iwp_eighth_16.n_triangles, D / 50)
        results = []
        for threads in ("1", "3"):
            monkeypatch.setenv("ISOSHELL_THREADS", threads)
            model = ShellModel(iwp_eighth_16, material, eighth_spec)
            sols = model.solve_cases(delta, [LOAD_CASES[k] for k in "UTS"])
            results.append([sols[k].e_total for k in "UTS"])
        assert results[0] == results[1]
