"""Closed density equation: coefficients, closure and finite-volume solver."""
import math

import numpy as np
import pytest
from scipy import integrate

from phaseflow.distributions import InfluxProfile, TptDistribution, WipLinearModulation
from phaseflow.errors import CoefficientError, DomainError
from phaseflow.pde import DensityPde, cell_to_nodes, coefficients, constitutive_f, moments, solve_density_pde


def test_coefficients_case3(uniform_short):
    m = moments(uniform_short)
    c, d = coefficients(m, 0.0, 20.0)
    assert c == pytest.approx(1 / 1.05, rel=1e-14)
    assert c == pytest.approx(0.95238, abs=5e-6)
    expected_d = (math.log(20) / 1.9 / 20.0) * (1.40333333333333333 - 1.05 ** 2) / 1.05 ** 3
    assert d == pytest.approx(expected_d, rel=1e-12)
    assert d == pytest.approx(0.02049, abs=5e-6)


def test_diffusivity_scales_inverse_influx(uniform_short):
    m = moments(uniform_short)
    assert coefficients(m, 0.0, 40.0)[1] == pytest.approx(0.5 * coefficients(m, 0.0, 20.0)[1], rel=1e-15)


def test_drift_includes_moment_rate(uniform_short):
    m = moments(uniform_short)
    c, _ = coefficients(m, 0.3, 20.0)
    assert c == pytest.approx(1 / m.t_1 + m.t_m1 / 20.0 * 0.3 / m.t_1)


def test_degenerate_distribution_pure_advection():
    m = moments(TptDistribution.uniform(0.5, 0.5 + 1e-8))
    c, d = coefficients(m, 0.0, 20.0)
    assert c == pytest.approx(2.0) and d < 1e-15


def test_zero_influx_undefined(uniform_short):
    with pytest.raises(CoefficientError):
        coefficients(moments(uniform_short), 0.0, 0.0)
    with pytest.raises(CoefficientError):
        solve_density_pde(InfluxProfile.constant(0.0), uniform_short, t_end=1.0)


def test_unknown_moment_method(uniform_short):
    with pytest.raises(DomainError):
        moments(uniform_short, method="spline")


def test_constitutive_examples(uniform_short):
    assert constitutive_f(21.0, 1.0, uniform_short) == pytest.approx(21.0 / 1.9 / 1.05, rel=1e-14)
    assert constitutive_f(21.0, 1.0, uniform_short) == pytest.approx(10.526, abs=5e-4)
    assert constitutive_f(21.0, 0.05, uniform_short) == 0.0
    assert constitutive_f(21.0, 2.5, uniform_short) == 0.0
    with pytest.raises(DomainError):
        constitutive_f(-1.0, 1.0, uniform_short)


@pytest.mark.parametrize("rho", [0.3, 21.0, 81.0])
@pytest.mark.parametrize("dist", [TptDistribution.uniform(0.1, 2.0), TptDistribution(0.1, 8.0, "linear", 0.5)])
def test_constitutive_normalisation(rho, dist):
    val, _ = integrate.quad(lambda r: constitutive_f(rho, r, dist), dist.lower, dist.upper,
                            epsabs=1e-12, epsrel=1e-12)
    assert val == pytest.approx(rho, rel=1e-8)


def test_cell_to_nodes_oracle():
    # linear cell profile rho(x) = x: node cell averages are the node values (midpoints of the end half cells)
    n = 400
    centres = (np.arange(n) + 0.5) / n
    nodes = cell_to_nodes(centres, 8)
    expected = np.linspace(0, 1, 9)
    expected[0] = 1 / 32
    expected[-1] = 1 - 1 / 32
    assert np.allclose(nodes, expected, atol=1e-12)
    assert cell_to_nodes(np.full(200, 3.0), 8) == pytest.approx(np.full(9, 3.0))


def test_plateau_and_initial_state(uniform_short, lam20):
    traj = solve_density_pde(lam20, uniform_short, N=200, t_end=10.0)
    assert np.all(traj.densities[0] == 0.0) and traj.wip[0] == 0.0
    interior = traj.meta["cells"][20:180]
    assert np.allclose(interior, 21.0, rtol=1e-3)
    assert traj.outflux[-1] == pytest.approx(20.0, rel=1e-3)


def test_conservation_per_step(uniform_short, lam20):
    traj = solve_density_pde(lam20, uniform_short, N=200, t_end=3.0)
    assert traj.meta["max_balance_error"] < 1e-3


def test_step_respects_stability_bound(uniform_short, lam20):
    solver = DensityPde(lam20, uniform_short, n_cells=100)
    c, d = solver.coefficients_at(0.0)
    info = solver.step()
    assert info.dt <= 0.9 * min(solver.dx / c, solver.dx ** 2 / (2 * d))
    assert info.dt * (c / solver.dx + 2 * d / solver.dx ** 2) == pytest.approx(0.9)


def test_grid_convergence(uniform_short, lam20):
    fine = 3200
    sols = {N: np.repeat(solve_density_pde(lam20, uniform_short, N=N, t_end=1.0, output_times=[1.0])
                         .meta["cells"], fine // N) for N in (400, 800, 1600)}
    e1 = np.abs(sols[400] - sols[800]).mean()
    e2 = np.abs(sols[800] - sols[1600]).mean()
    assert np.log2(e1 / e2) >= 0.9


def test_time_varying_influx_and_modulation():
    ramp = InfluxProfile.from_pairs([(0.0, 5.0), (2.0, 20.0)])
    d = TptDistribution(0.1, 1.0, modulation=WipLinearModulation(0.1, 1.0, 0.02))
    traj = solve_density_pde(ramp, d, N=100, t_end=3.0)
    assert traj.meta["max_balance_error"] < 1e-3
    assert np.all(np.isfinite(traj.densities)) and np.all(traj.densities >= -1e-9)


def test_rejects_bad_arguments(uniform_short, lam20):
    with pytest.raises(DomainError):
        solve_density_pde(lam20, uniform_short, t_end=0.0)
    with pytest.raises(DomainError):
        DensityPde(lam20, uniform_short, n_cells=1)
