import numpy as np
import pytest

ACCEPTANCE_KEY = pytest.StashKey[list]()

from meshdiss.dissipativity import run_pipeline
from meshdiss.netmodel import GenConfig, Group, NodeParams, SpreadingNetwork, generate_random


@pytest.fixture(scope="session")
def net1():
    return generate_random(GenConfig(seed=1))


@pytest.fixture(scope="session")
def pipeline1(net1):
    return run_pipeline(net1)


@pytest.fixture
def two_group_net():
    """Small hand-built network: groups of 2 and 1 nodes with two inter-group links."""
    g1 = Group([NodeParams(0.8, 0.04, 0.5), NodeParams(0.6, 0.03, 0.2)], np.array([[0.0, 0.2], [0.1, 0.0]]), "A")
    g2 = Group([NodeParams(0.7, 0.035, 0.1)], np.zeros((1, 1)), "B")
    m = np.zeros((3, 3))
    m[0, 2] = 0.3
    m[2, 1] = 0.15
    return SpreadingNetwork([g1, g2], m)


def interconnection_form(Xp11, Xp12, Xp22, T, m_uy, m_uw, m_zy, m_zw):
    """Quadratic form ``s_target(w, z) - sum_i p_i s_i(u_i, y_i)`` over ``(y, w)``.

    Written directly from the interconnection ``u = M_uy y + M_uw w``,
    ``z = M_zy y + M_zw w``; it is PSD exactly when the composed system is
    target-dissipative with the weighted subsystem storages.
    """
    n, q = m_uw.shape
    U = np.hstack([m_uy, m_uw])
    Y = np.hstack([np.eye(n), np.zeros((n, q))])
    W = np.hstack([np.zeros((q, n)), np.eye(q)])
    Z = np.hstack([m_zy, m_zw])
    T11, T12, T22 = T
    H = W.T @ T11 @ W + W.T @ T12 @ Z + Z.T @ T12.T @ W + Z.T @ T22 @ Z
    H -= U.T @ Xp11 @ U + U.T @ Xp12 @ Y + Y.T @ Xp12.T @ U + Y.T @ Xp22 @ Y
    return 0.5 * (H + H.T)


def network_form(net, groups, p_groups, m, g):
    p = np.concatenate([np.full(s, pi) for s, pi in zip(net.sizes, p_groups)])
    x11 = np.concatenate([gc.x11 for gc in groups])
    x22 = np.concatenate([gc.x22 for gc in groups])
    n = net.n_nodes
    return interconnection_form(np.diag(p * x11), np.diag(0.5 * p), np.diag(p * x22),
                                (g * np.eye(n), np.zeros((n, n)), -np.eye(n)),
                                m, np.eye(n), np.eye(n), np.zeros((n, n)))


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one summary line per acceptance criterion, printed after the run."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
