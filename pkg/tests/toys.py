"""Small hand-built networks for dynamics and control tests."""

import numpy as np

from ibrplace.dynamics import network_from_admittance


def lossless_admittance(n, edges):
    """Ybus of a purely reactive network; ``edges`` holds (i, j, b) with b = 1/x."""
    Y = np.zeros((n, n), dtype=complex)
    for i, j, b in edges:
        y = -1j * b
        Y[i, i] += y
        Y[j, j] += y
        Y[i, j] -= y
        Y[j, i] -= y
    return Y


def smib(b=5.0, p=1.0, m=10.0, d=0.0, E=(1.0, 1.0)):
    """One machine against an infinite bus (the bus is node 1, an IBR held fixed)."""
    Y = lossless_admittance(2, [(0, 1, b)])
    return network_from_admittance(
        Y, E, 1, [p, -p], inertia=m, damping=d, droop=1e12, gov_time=1.0, p_max=10.0
    )


def three_machine(d=1.0):
    """Three machines and one IBR on a lossless meshed network; the IBR absorbs."""
    edges = [(0, 1, 8.0), (1, 2, 6.0), (0, 2, 4.0), (3, 0, 10.0), (3, 2, 5.0)]
    Y = lossless_admittance(4, edges)
    return network_from_admittance(
        Y, np.ones(4), 3, [1.0, 0.5, 0.3, -1.8], inertia=[8.0, 6.0, 4.0], damping=d,
        droop=0.05, gov_time=0.5, p_max=[2.0, 2.0, 2.0],
    )
