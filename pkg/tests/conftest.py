import pytest

from enertree.core import EnergyState, Population, TreeNetwork


def build_tree(n, edges, energies=None, arity=None, w=None):
    """Assemble a Population from explicit (parent, child) edges."""
    net = TreeNetwork(n, arity_bound=arity)
    for p, c in edges:
        net.add_edge(p, c)
    if energies is None:
        energies = [0.0] * n
    return Population(net, EnergyState(energies), w=w)


DEMO_EDGES = [(5, 0), (5, 4), (0, 1), (4, 3), (1, 2)]
DEMO_ENERGIES = [500.0, 100.0, 150.0, 400.0, 350.0, 600.0]
# depths: node5=0, node0=node4=1, node1=node3=2, node2=3; height 3
DEMO_DEPTHS = [1, 2, 3, 2, 1, 0]
DEMO_TOTAL = 2100.0
DEMO_IDEAL = [400.0, 200.0, 100.0, 200.0, 400.0, 800.0]


@pytest.fixture
def demo_pop():
    """Six-node binary demo tree used across the golden tests."""
    return build_tree(6, DEMO_EDGES, list(DEMO_ENERGIES))


def star_pop(root_energy=25.0, leaf_energy=12.5, leaves=6):
    n = leaves + 1
    edges = [(0, i) for i in range(1, n)]
    energies = [root_energy] + [leaf_energy] * leaves
    return build_tree(n, edges, energies)


def line_pop(energies):
    n = len(energies)
    edges = [(i, i + 1) for i in range(n - 1)]
    return build_tree(n, edges, list(energies))
