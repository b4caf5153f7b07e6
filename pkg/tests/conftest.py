import numpy as np
import pytest

from gprdd import Observation, SEParams, Theta, canonicalize


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


@pytest.fixture
def six_row_dataset():
    """Two groups, three controls and three treated, mixed input order."""
    obs = [
        Observation(0.3, -0.7, False, "g1"),
        Observation(-0.1, -0.2, False, "g1"),
        Observation(0.2, -0.4, False, "g2"),
        Observation(1.1, 0.3, True, "g1"),
        Observation(0.9, 0.5, True, "g2"),
        Observation(1.4, 0.9, True, "g2"),
    ]
    return canonicalize(obs)


@pytest.fixture
def theta_j2():
    return Theta(
        mu=1.0,
        sigma_minus_sq=np.array([0.3, 0.5]),
        sigma_plus_sq=np.array([0.4, 0.6]),
        f_kernel=SEParams(1.2, 0.8),
        g_kernel=SEParams(0.9, 1.1),
        delta_kernel=SEParams(0.7, 0.5),
    )


def compose_joint_oracle(data, components, theta):
    """Joint mean/covariance of (delta, Y) assembled by the conditional-chain
    composition rule rather than the production block formulas."""
    N, J = data.N, data.J
    B = np.zeros((N, J))
    B[data.N_minus :, :] = np.eye(J)[data.treated_group_index]
    A = np.hstack([np.eye(N), B])  # Y = f + B delta + eps
    cov_X = np.zeros((N + J, N + J))
    cov_X[:N, :N] = components.Kg + components.D
    cov_X[N:, N:] = components.Kdelta
    mu_X = np.concatenate([np.zeros(N), np.full(J, theta.mu)])
    cov_Y = A @ cov_X @ A.T + np.diag(components.Sigma)
    cov_dY = (cov_X @ A.T)[N:, :]
    mu_Y = A @ mu_X
    return mu_Y, cov_dY, cov_Y
