"""Log-density scheme: micro-step oracle, conservation, dissipation, bounds."""

import numpy as np
import pytest
from scipy.optimize import brentq

from pmefem.assembly import SolverError, lumped_mass
from pmefem.logdensity import (
    LogDensityState,
    NewtonParams,
    StepSystem,
    bounds,
    entropy_energy,
    init_log_state,
    newton_update,
    step_logdensity,
)
from pmefem.mesh import build_structured_mesh, compute_edge_geometry
from pmefem.problems import barenblatt


def make_state(mesh, u, active=None, m=2.0, cutoff=1e-14):
    geom = compute_edge_geometry(mesh)
    active = np.ones(mesh.n_vertices, bool) if active is None else active
    return LogDensityState(mesh=mesh, geom=geom, m=m, u=np.asarray(u, float),
                           active=active, cutoff=cutoff, lumped=lumped_mass(mesh))


def positive_state(mesh, m=2.0, seed=0):
    rng = np.random.default_rng(seed)
    u = np.log(0.5 + rng.uniform(0.0, 1.5, mesh.n_vertices))
    return make_state(mesh, u, m=m)


class TestInit:
    def test_uniform_one(self):
        mesh = build_structured_mesh("interval", (0, 1), 8)
        st = init_log_state(mesh, lambda pts: np.ones(len(pts)), 2.0)
        assert np.all(st.active)
        assert st.u == pytest.approx(np.zeros(9))

    def test_barenblatt_support(self):
        mesh = build_structured_mesh("interval", (-10, 10), 100)
        st = init_log_state(mesh, lambda pts: barenblatt(pts[:, 0], 0.0, 2, 3.0, 1), 2.0)
        xs = mesh.vertices[:, 0]
        assert np.array_equal(st.active, np.abs(xs) < 6.0)  # support radius sqrt(2m s0/(k(m-1)))=6

    def test_tiny_positive_density_stays_active(self):
        mesh = build_structured_mesh("interval", (0, 1), 2)
        st = init_log_state(mesh, lambda pts: np.full(len(pts), 1e-300), 2.0)
        assert np.all(st.active)
        assert st.u == pytest.approx(np.full(3, np.log(1e-300)))
        assert st.u[0] == pytest.approx(-690.77552, rel=1e-6)

    def test_negative_density_rejected(self):
        mesh = build_structured_mesh("interval", (0, 1), 2)
        with pytest.raises(ValueError):
            init_log_state(mesh, lambda pts: np.full(len(pts), -0.1), 2.0)


class TestMicroStep:
    def bisection_oracle(self):
        # mass constraint exp(u1)+exp(u2)=3 reduces the 2-node step to a
        # scalar equation; vertex-rule coefficient (2+8)/2=5 on the element
        f = lambda a: 2 * a - 2 + 0.2 * np.log(a / (3 - a))
        return brentq(f, 1e-12, 3 - 1e-12, xtol=1e-15)

    def test_two_node_step_matches_bisection(self):
        mesh = build_structured_mesh("interval", (0, 1), 1)
        st = make_state(mesh, [0.0, np.log(2.0)], m=2.0)
        new = step_logdensity(st, 0.01, variant="vertex")
        a = self.bisection_oracle()
        assert np.exp(new.u) == pytest.approx([a, 3 - a], abs=1e-8)
        assert np.exp(new.u) == pytest.approx([1.0604, 1.9396], abs=2e-4)

    def test_mass_constant(self):
        mesh = build_structured_mesh("interval", (0, 1), 1)
        st = make_state(mesh, [0.0, np.log(2.0)], m=2.0)
        new = step_logdensity(st, 0.01)
        assert new.total_mass() == pytest.approx(st.total_mass(), rel=1e-10)


class TestFixedPoints:
    @pytest.mark.parametrize("variant", ["vertex", "edge"])
    def test_uniform_state_unchanged_bitwise(self, variant):
        mesh = build_structured_mesh("interval", (0, 2), 6)
        st = make_state(mesh, np.full(7, 0.3), m=3.0)
        new = step_logdensity(st, 0.5, variant=variant)
        assert np.array_equal(new.u, st.u)
        assert np.array_equal(new.active, st.active)
        assert new.time == pytest.approx(st.time + 0.5)


class TestNewton:
    def test_update_at_solution_is_fixed_point(self):
        mesh = build_structured_mesh("interval", (0, 1), 1)
        st = make_state(mesh, [0.0, np.log(2.0)], m=2.0)
        solved = step_logdensity(st, 0.01)
        system = StepSystem(st, 0.01, "vertex")
        u2, act2 = newton_update(system, solved.u, solved.active)
        assert np.max(np.abs(u2 - solved.u)) < 1e-12

    def test_uniform_converges_immediately(self):
        mesh = build_structured_mesh("interval", (0, 1), 4)
        st = make_state(mesh, np.zeros(5), m=2.0)
        system = StepSystem(st, 0.1, "vertex")
        r = system.residual(st.u, st.active)
        assert np.max(np.abs(r)) < 1e-12

    def test_functional_decreases_along_iterates(self):
        mesh = build_structured_mesh("interval", (-2, 2), 24)
        rng = np.random.default_rng(1)
        st = make_state(mesh, rng.normal(0.0, 1.0, 25), m=2.0)
        system = StepSystem(st, 0.05, "vertex")
        u, act = st.u.copy(), st.active.copy()
        values = [system.functional(u, act)]
        for _ in range(8):
            u, act = newton_update(system, u, act)
            values.append(system.functional(u, act))
        assert all(b <= a + 1e-12 * max(1, abs(a)) for a, b in zip(values, values[1:]))


class TestConservationAndDissipation:
    @pytest.mark.parametrize("variant", ["vertex", "edge"])
    @pytest.mark.parametrize("maker", [
        lambda: build_structured_mesh("interval", (-1, 1), 20),
        lambda: build_structured_mesh("triangle", ((0, 1), (0, 1)), (5, 5)),
        lambda: build_structured_mesh("acute_triangle", ((0, 1), (0, 1)), (5, 5)),
    ])
    def test_mass_and_energy_over_steps(self, variant, maker):
        mesh = maker()
        st = positive_state(mesh, m=2.0, seed=4)
        mass0 = st.total_mass()
        energy = entropy_energy(st)
        for _ in range(5):
            st = step_logdensity(st, 0.02, variant=variant)
            assert st.total_mass() == pytest.approx(mass0, rel=1e-10)
            e = entropy_energy(st)
            assert e <= energy + 1e-10
            energy = e

    def test_vertex_variant_on_quads(self):
        mesh = build_structured_mesh("quad", ((0, 1), (0, 1)), (5, 5))
        st = positive_state(mesh, m=3.0, seed=2)
        mass0 = st.total_mass()
        energy = entropy_energy(st)
        for _ in range(4):
            st = step_logdensity(st, 0.01, variant="vertex")
            assert st.total_mass() == pytest.approx(mass0, rel=1e-10)
            assert entropy_energy(st) <= energy + 1e-10
            energy = entropy_energy(st)

    def test_positivity_structural(self):
        mesh = build_structured_mesh("interval", (-10, 10), 60)
        st = init_log_state(mesh, lambda pts: barenblatt(pts[:, 0], 0.0, 2, 3.0, 1), 2.0)
        for _ in range(5):
            st = step_logdensity(st, 0.05)
            dens = st.density()
            assert np.all(np.isfinite(dens))
            assert np.all(dens[st.active] > 0)
            assert np.all(dens[~st.active] == 0)


class TestBoundPreservation:
    @pytest.mark.parametrize("maker", [
        lambda: build_structured_mesh("interval", (0, 1), 24),
        lambda: build_structured_mesh("triangle", ((0, 1), (0, 1)), (6, 6)),
        lambda: build_structured_mesh("acute_triangle", ((0, 1), (0, 1)), (6, 6)),
    ])
    def test_envelope_shrinks_edge_variant(self, maker):
        mesh = maker()
        st = positive_state(mesh, m=2.0, seed=9)
        lo, hi = bounds(st)
        for _ in range(6):
            st = step_logdensity(st, 0.05, variant="edge")
            lo2, hi2 = bounds(st)
            assert lo2 >= lo - 1e-9
            assert hi2 <= hi + 1e-9
            lo, hi = lo2, hi2

    def test_front_advances_with_vertex_variant(self):
        mesh = build_structured_mesh("interval", (-10, 10), 100)
        st = init_log_state(mesh, lambda pts: barenblatt(pts[:, 0], 0.0, 2, 3.0, 1), 2.0)
        n0 = int(st.active.sum())
        for _ in range(10):
            st = step_logdensity(st, 0.05)
        assert int(st.active.sum()) > n0


class TestDiagnostics:
    def test_entropy_energy_values(self):
        mesh = build_structured_mesh("interval", (0, 1), 4)
        st = make_state(mesh, np.zeros(5))
        assert entropy_energy(st) == pytest.approx(-1.0)  # rho=1 on |domain|=1
        st_e = make_state(mesh, np.ones(5))
        assert entropy_energy(st_e) == pytest.approx(0.0)  # rho=e: e*(1-1)

    def test_entropy_energy_all_inactive(self):
        mesh = build_structured_mesh("interval", (0, 1), 4)
        st = make_state(mesh, np.zeros(5), active=np.zeros(5, bool))
        assert entropy_energy(st) == 0.0

    def test_bounds(self):
        mesh = build_structured_mesh("interval", (0, 1), 4)
        st = make_state(mesh, np.full(5, 0.7))
        assert bounds(st) == pytest.approx((np.exp(0.7), np.exp(0.7)))
        empty = make_state(mesh, np.zeros(5), active=np.zeros(5, bool))
        with pytest.raises(ValueError):
            bounds(empty)

    def test_barenblatt_peak_bound(self):
        mesh = build_structured_mesh("interval", (-10, 10), 100)
        st = init_log_state(mesh, lambda pts: barenblatt(pts[:, 0], 0.0, 2, 3.0, 1), 2.0)
        assert bounds(st)[1] == pytest.approx(3.0)


class TestFailureModes:
    def test_nonconvergence_raises(self):
        mesh = build_structured_mesh("interval", (0, 1), 8)
        st = positive_state(mesh, seed=3)
        with pytest.raises(SolverError):
            step_logdensity(st, 1e6, newton=NewtonParams(max_iter=1))

    def test_invalid_variant(self):
        mesh = build_structured_mesh("interval", (0, 1), 4)
        st = positive_state(mesh)
        with pytest.raises(ValueError):
            step_logdensity(st, 0.1, variant="bogus")

    def test_nonpositive_dt(self):
        mesh = build_structured_mesh("interval", (0, 1), 4)
        st = positive_state(mesh)
        with pytest.raises(ValueError):
            step_logdensity(st, 0.0)
