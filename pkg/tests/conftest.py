"""Shared builders for the test suite."""

import numpy as np
import pytest

from netalloc import Scenario, ScenarioParams, generate_scenario


def make_scenario(cells=3, subcarriers=8, users=2, seed=0, **kw):
    params = ScenarioParams(num_cells=cells, num_subcarriers=subcarriers,
                            users_per_cell=users, seed=seed, **kw)
    return generate_scenario(params)


def hand_scenario(gains, users_per_cell, *, p_max=1.0, noise_power=1e-6,
                  snr_gap=1.0, weights=1.0, seed=0):
    """Scenario with explicitly chosen gains (positions are placeholders)."""
    gains = np.asarray(gains, dtype=float)
    m_cells, _, k_max, n_sub = gains.shape
    params = ScenarioParams(
        num_cells=m_cells, num_subcarriers=n_sub, users_per_cell=users_per_cell,
        p_max=p_max, noise_power=noise_power, snr_gap=snr_gap, weights=weights,
        seed=seed)
    return Scenario(
        params=params,
        bs_positions=np.zeros((m_cells, 2)),
        user_positions=tuple(np.zeros((k, 2)) for k in params.users_per_cell),
        gains=gains,
        noise=np.full((m_cells, k_max, n_sub), noise_power))


def fd_rate_gradient(scenario, power, u, m, n):
    """Central-difference gradient of the (u, m, n) rate in every station's
    power on subcarrier n; the independent verification route."""
    from netalloc import rate_subcarrier

    grad = np.empty(scenario.num_cells)
    for l in range(scenario.num_cells):
        h = 1e-6 * max(power[l, n], 1.0)
        up = power.copy()
        up[l, n] += h
        down = power.copy()
        down[l, n] -= h
        grad[l] = (rate_subcarrier(scenario, up, u, m, n)
                   - rate_subcarrier(scenario, down, u, m, n)) / (2.0 * h)
    return grad


@pytest.fixture
def small_scenario():
    return make_scenario(cells=3, subcarriers=4, users=2, seed=11)
