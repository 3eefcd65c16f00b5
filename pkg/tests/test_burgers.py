import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbsns.burgers import (
    BurgersProblem,
    advect,
    cole_hopf_oracle,
    energy_identity_check,
    fbsde_check,
    max_principle_check,
    solve_burgers,
)
from fbsns.exceptions import MaxPrincipleViolation, PicardDivergenceError
from fbsns.fields import Grid, TensorField, VectorField
from fbsns.heat import heat_convolve
from fbsns.presets import random_bandlimited
from fbsns.spacetime import SpaceTimeField
from fbsns.stochastic import RngStream


def sine(g, a=0.5):
    return VectorField(g, (a * np.sin(g.coords()[0]))[None])


class TestProblem:
    def test_validation(self):
        g = Grid(1, 16)
        with pytest.raises(ValueError):
            BurgersProblem.uniform(sine(g), -1.0, 1.0, 10)
        with pytest.raises(ValueError):
            BurgersProblem(sine(g), 0.1, 2.0, np.linspace(0, 1, 5))
        with pytest.raises(ValueError):
            BurgersProblem(sine(g), 0.1, 1.0, np.array([0.0, 0.5, 0.4, 1.0]))
        with pytest.raises(ValueError):
            BurgersProblem.uniform(sine(g), 0.1, 1.0, 4, b=VectorField.zeros(Grid(1, 32)))

    def test_advect_matches_closed_form(self):
        g = Grid(1, 32)
        x = g.coords()[0]
        w = np.cos(x)[None]
        u = np.sin(2 * x)[None]
        np.testing.assert_allclose(advect(g, w, u)[0], np.cos(x) * 2 * np.cos(2 * x), atol=1e-12)


class TestLinearCases:
    def test_no_forcing_is_heat_flow(self):
        g = Grid(2, 16)
        psi = random_bandlimited(g, seed=3)
        p = BurgersProblem.uniform(psi, 0.3, 1.0, 10)
        u = solve_burgers(p)
        for t in (0.0, 0.5):
            np.testing.assert_allclose(u.at(t).components, heat_convolve(psi, 1.0 - t, 0.3).components, atol=1e-12)

    def test_constant_drift_translates(self):
        # u(t, x) = H(T - t) psi(x + b (T - t)) solves the problem with constant drift b
        g = Grid(1, 64)
        psi = sine(g, 1.0)
        b = VectorField.constant(g, [0.7])
        p = BurgersProblem.uniform(psi, 0.2, 1.0, 400, b=b)
        u = solve_burgers(p)
        x = g.coords()[0]
        ref = np.exp(-0.5 * 0.2) * np.sin(x + 0.7)
        assert np.max(np.abs(u.at(0.0).components[0] - ref)) < 5e-3

    def test_constant_forcing_adds_linearly(self):
        g = Grid(1, 16)
        phi = VectorField.constant(g, [2.0])
        p = BurgersProblem.uniform(VectorField.zeros(g), 0.1, 1.5, 30, phi=phi)
        u = solve_burgers(p)
        for t in u.times:
            np.testing.assert_allclose(u.at(t).components, 2.0 * (1.5 - t), atol=1e-12)

    def test_damping_term(self):
        # c = lambda I multiplies the solution by exp(lambda (T - t)); right-endpoint rule is first order
        g = Grid(1, 16)
        c = TensorField(g, -0.5 * np.ones((1, 1) + g.shape))
        p = BurgersProblem.uniform(VectorField.constant(g, [1.0]), 0.1, 1.0, 400, c=c)
        u = solve_burgers(p)
        assert abs(u.at(0.0).components[0, 0] - np.exp(-0.5)) < 2e-3


class TestColeHopf:
    def test_oracle_satisfies_pde(self):
        g = Grid(1, 128)
        times = np.linspace(0, 1, 2001)
        v = cole_hopf_oracle(sine(g), 0.2, 1.0, times)
        k = 1000
        vt = (v.fields[k + 1].components[0] - v.fields[k - 1].components[0]) / (times[k + 1] - times[k - 1])
        vk = v.fields[k].components[0]
        vx = advect(g, np.ones((1,) + g.shape), vk[None])[0]
        vxx = advect(g, np.ones((1,) + g.shape), vx[None])[0]
        assert np.max(np.abs(vt + 0.1 * vxx + vk * vx)) < 1e-5

    def test_oracle_terminal_value(self):
        g = Grid(1, 64)
        v = cole_hopf_oracle(sine(g), 0.2, 1.0, [0.0, 1.0])
        np.testing.assert_allclose(v.at(1.0).components, sine(g).components, atol=1e-12)

    def test_oracle_rejects_bad_data(self):
        g = Grid(1, 32)
        x = g.coords()[0]
        with pytest.raises(ValueError):
            cole_hopf_oracle(VectorField(g, (np.sin(x) + 1.0)[None]), 0.2, 1.0, [0, 1])
        with pytest.raises(ValueError):
            cole_hopf_oracle(VectorField(g, np.sin(15 * x)[None]), 0.2, 1.0, [0, 1])
        with pytest.raises(ValueError):
            cole_hopf_oracle(random_bandlimited(Grid(2, 16), seed=0), 0.2, 1.0, [0, 1])

    def test_solver_converges_to_oracle(self):
        errs = []
        for n, steps in ((64, 50), (128, 100)):
            g = Grid(1, n)
            p = BurgersProblem.uniform(sine(g), 0.2, 1.0, steps, alpha=1.0)
            u = solve_burgers(p)
            errs.append(np.max(np.abs(u.values() - cole_hopf_oracle(sine(g), 0.2, 1.0, p.time_grid).values())))
        assert errs[1] < errs[0] / 1.8


class TestPicard:
    def test_divergence_reports_history(self):
        g = Grid(1, 64)
        p = BurgersProblem.uniform(sine(g, 5.0), 0.05, 3.0, 60, alpha=1.0)
        with pytest.raises(PicardDivergenceError) as err:
            solve_burgers(p, max_iter=50)
        assert len(err.value.residuals) >= 1

    def test_residuals_decrease_to_tolerance(self):
        g = Grid(1, 64)
        u = solve_burgers(BurgersProblem.uniform(sine(g), 0.2, 1.0, 50, alpha=1.0), tol=1e-11)
        assert u.final_residual < 1e-11
        assert u.iterations == len(u.residuals)


class TestMaxPrinciple:
    @settings(max_examples=10)
    @given(st.integers(0, 10_000), st.sampled_from([0.0, 1.0]), st.sampled_from([1, 2]))
    def test_holds_for_random_data(self, seed, alpha, dim):
        g = Grid(dim, 32 if dim == 1 else 16)
        psi = random_bandlimited(g, seed=seed, kmax=3, amplitude=0.5)
        phi = random_bandlimited(g, seed=seed + 1, kmax=3, amplitude=0.2)
        p = BurgersProblem.uniform(psi, 0.3, 0.5, 40, alpha=alpha, phi=phi)
        rep = max_principle_check(p, solve_burgers(p))
        assert rep.min_slack >= -1e-8

    def test_violation_raises(self):
        g = Grid(1, 32)
        p = BurgersProblem.uniform(sine(g), 0.2, 1.0, 10)
        u = solve_burgers(p)
        bad = SpaceTimeField.from_array(g, u.times, 2.0 * u.values())
        with pytest.raises(MaxPrincipleViolation) as err:
            max_principle_check(p, bad)
        assert err.value.lhs > err.value.rhs

    def test_requires_c_zero(self):
        g = Grid(1, 16)
        c = TensorField(g, np.zeros((1, 1) + g.shape))
        p = BurgersProblem.uniform(sine(g), 0.2, 1.0, 4, c=c)
        with pytest.raises(ValueError):
            max_principle_check(p, solve_burgers(p))


class TestEnergy:
    def test_heat_case_exact_to_quadrature(self):
        g = Grid(1, 128)
        p = BurgersProblem.uniform(sine(g), 0.2, 1.0, 200)
        for m in (0, 1):
            assert energy_identity_check(p, solve_burgers(p), m=m).residual < 1e-6

    def test_nonlinear_residual_first_order(self):
        res = []
        for steps in (50, 100):
            g = Grid(1, 64)
            p = BurgersProblem.uniform(sine(g), 0.2, 1.0, steps, alpha=1.0)
            res.append(energy_identity_check(p, solve_burgers(p)).residual)
        assert 1.7 < res[0] / res[1] < 2.5


class TestFbsde:
    def test_representation_matches_solution(self):
        g = Grid(1, 32)
        p = BurgersProblem.uniform(sine(g), 0.3, 0.5, 25, alpha=1.0)
        u = solve_burgers(p)
        rep = fbsde_check(p, u, 4000, RngStream(0))
        assert rep.passed
        assert rep.pathwise_passed

    def test_reproducible(self):
        g = Grid(1, 16)
        p = BurgersProblem.uniform(sine(g), 0.3, 0.5, 10)
        u = solve_burgers(p)
        a = fbsde_check(p, u, 200, RngStream(4))
        b = fbsde_check(p, u, 200, RngStream(4))
        np.testing.assert_array_equal(a.mean, b.mean)
