import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enertree.core import EnergyState, Population, TreeNetwork
from enertree.energy import (
    DepthTarget,
    IdealEnergyTable,
    IdealTarget,
    KappaTransfer,
    LambdaExchange,
    LossModel,
    RandExchange,
    compute_ideal_energies,
    depth_target,
    ideal_target_step,
    k_depth_target_step,
    kappa_transfer_step,
    lambda_exchange_step,
    parse_energy_protocol,
    rand_exchange_step,
    sample_beta,
    target_feasible,
)
from enertree.errors import DomainError
from enertree.estimation import true_depths
from enertree.formation import FormationProtocol, apply_formation_rule
from enertree.scheduler import make_rng, sample_pair

from conftest import (
    DEMO_EDGES,
    DEMO_IDEAL,
    DEMO_TOTAL,
    build_tree,
    star_pop,
)


# ---------------------------------------------------------------- ideal table
def test_ideal_table_demo_tree(demo_pop):
    table = compute_ideal_energies(demo_pop.network, DEMO_TOTAL)
    assert table.base == pytest.approx(100.0, rel=1e-12)
    assert list(table.values) == pytest.approx(DEMO_IDEAL, rel=1e-12)
    assert math.fsum(table.values) == pytest.approx(DEMO_TOTAL, rel=1e-9)


def test_ideal_table_single_node():
    net = TreeNetwork(1)
    table = compute_ideal_energies(net, 7.0)
    assert table.values == (7.0,)


def test_ideal_table_star():
    pop = star_pop()
    table = compute_ideal_energies(pop.network, 100.0)
    assert table.values[0] == pytest.approx(25.0)
    assert all(v == pytest.approx(12.5) for v in table.values[1:])


def test_ideal_table_requires_complete_network():
    net = TreeNetwork(3)
    net.add_edge(0, 1)
    with pytest.raises(DomainError):
        compute_ideal_energies(net, 100.0)


# ------------------------------------------------------------- ideal-target
def _table(values):
    return IdealEnergyTable(values=tuple(values), base=0.0, total=math.fsum(values))


def test_ideal_target_step_narrative_pair():
    e = EnergyState([500.0, 150.0])
    moved = ideal_target_step(e, 0, 1, _table([400.0, 200.0]), 0.0)
    assert moved == pytest.approx(50.0)
    assert e.per_node == pytest.approx([450.0, 200.0])


def test_ideal_target_step_noop_at_target():
    e = EnergyState([400.0, 200.0])
    assert ideal_target_step(e, 0, 1, _table([400.0, 200.0]), 0.0) == 0.0
    assert e.per_node == [400.0, 200.0]


def test_ideal_target_step_with_loss():
    e = EnergyState([300.0, 100.0])
    moved = ideal_target_step(e, 0, 1, _table([200.0, 300.0]), 0.2)
    assert moved == pytest.approx(100.0)
    assert e.per_node[0] == pytest.approx(200.0)
    assert e.per_node[1] == pytest.approx(180.0)
    assert e.lost == pytest.approx(20.0)


def test_ideal_target_step_reverse_direction():
    e = EnergyState([100.0, 300.0])
    moved = ideal_target_step(e, 0, 1, _table([200.0, 150.0]), 0.0)
    assert moved == pytest.approx(-100.0)
    assert e.per_node == pytest.approx([200.0, 200.0])


def test_ideal_target_fixed_point_is_idle(demo_pop):
    table = compute_ideal_energies(demo_pop.network, DEMO_TOTAL)
    e = EnergyState(list(table.values))
    rng = make_rng(0)
    for _ in range(500):
        u, v = sample_pair(rng, 6)
        assert ideal_target_step(e, u, v, table, 0.0) == 0.0
    assert e.per_node == list(table.values)


# ---------------------------------------------------------- lambda-exchange
def test_lambda_exchange_tops_parent_up():
    e = EnergyState([500.0, 400.0])
    assert lambda_exchange_step(e, 0, 1, 2.0, 0.0) == pytest.approx(100.0)
    assert e.per_node == pytest.approx([600.0, 300.0])


def test_lambda_exchange_noop_when_already_relaxed():
    e = EnergyState([500.0, 100.0])
    assert lambda_exchange_step(e, 0, 1, 2.0, 0.0) == 0.0


def test_lambda_exchange_ratio_three():
    e = EnergyState([100.0, 300.0])
    assert lambda_exchange_step(e, 0, 1, 3.0, 0.0) == pytest.approx(200.0)
    assert e.per_node == pytest.approx([300.0, 100.0])
    assert e.per_node[0] == pytest.approx(3.0 * e.per_node[1])


def test_lambda_exchange_with_loss():
    e = EnergyState([0.0, 300.0])
    moved = lambda_exchange_step(e, 0, 1, 2.0, 0.2)
    assert moved == pytest.approx(200.0)
    assert e.per_node == pytest.approx([160.0, 100.0])
    assert e.lost == pytest.approx(40.0)


@settings(max_examples=200)
@given(
    ep=st.floats(0.0, 1e6),
    ec=st.floats(1e-6, 1e6),
    lam=st.floats(2.0, 8.0),
)
def test_lambda_exchange_lossless_lands_exactly_on_ratio(ep, ec, lam):
    e = EnergyState([ep, ec])
    moved = lambda_exchange_step(e, 0, 1, lam, 0.0)
    if moved:
        assert e.per_node[0] == pytest.approx(lam * e.per_node[1], rel=1e-9)
        assert e.per_node[1] >= 0.0
    else:
        assert e.per_node == [ep, ec]


# ------------------------------------------------------------ rand-exchange
def test_rand_exchange_degenerate_interval_matches_fixed_ratio():
    e1 = EnergyState([500.0, 400.0])
    e2 = EnergyState([500.0, 400.0])
    moved1 = rand_exchange_step(e1, 0, 1, make_rng(5), 0.0, 2.0, 2.0)
    moved2 = lambda_exchange_step(e2, 0, 1, 2.0, 0.0)
    assert moved1 == moved2
    assert e1.per_node == e2.per_node


def test_rand_exchange_noop_when_relaxed_for_all_ratios():
    e = EnergyState([500.0, 100.0])
    rng = make_rng(1)
    for _ in range(100):
        assert rand_exchange_step(e, 0, 1, rng, 0.0) == 0.0


def test_rand_exchange_ratio_mean():
    # with (E_p, E_c) = (0, 1) the exchange moves x = lam / (lam + 1), so the
    # sampled ratio is recoverable as x / (1 - x)
    rng = make_rng(77)
    ratios = []
    for _ in range(10_000):
        e = EnergyState([0.0, 1.0])
        x = rand_exchange_step(e, 0, 1, rng, 0.0)
        ratios.append(x / (1.0 - x))
    mean = sum(ratios) / len(ratios)
    assert abs(mean - 2.5) <= 0.02
    assert all(2.0 <= r <= 3.0 + 1e-9 for r in ratios)


# ------------------------------------------------------------ kappa-transfer
def test_kappa_transfer_halves_child():
    e = EnergyState([500.0, 400.0])
    assert kappa_transfer_step(e, 0, 1, 0.5, 0.0) == pytest.approx(200.0)
    assert e.per_node == pytest.approx([700.0, 200.0])


def test_kappa_transfer_noop_when_relaxed():
    e = EnergyState([500.0, 100.0])
    assert kappa_transfer_step(e, 0, 1, 0.5, 0.0) == 0.0


def test_kappa_transfer_fraction():
    e = EnergyState([100.0, 100.0])
    assert kappa_transfer_step(e, 0, 1, 0.3, 0.0) == pytest.approx(30.0)
    assert e.per_node == pytest.approx([130.0, 70.0])


# -------------------------------------------------------------- depth-target
def _stabilized_demo(energies=None):
    pop = build_tree(6, DEMO_EDGES, energies or [500.0, 100.0, 150.0, 400.0, 350.0, 600.0])
    depth, height = true_depths(pop.network)
    pop.d = depth
    pop.h = [height] * 6
    return pop


def test_depth_target_values(demo_pop):
    pop = _stabilized_demo()
    assert depth_target(pop, 0, 2, DEMO_TOTAL) == pytest.approx(262.5)
    assert depth_target(pop, 4, 2, DEMO_TOTAL) == pytest.approx(262.5)
    assert depth_target(pop, 1, 2, DEMO_TOTAL) == pytest.approx(131.25)
    assert depth_target(pop, 2, 2, DEMO_TOTAL) == pytest.approx(65.625)


def test_depth_target_root_has_none():
    pop = _stabilized_demo()
    with pytest.raises(DomainError):
        depth_target(pop, 5, 2, DEMO_TOTAL)


def test_depth_target_fresh_registers_degenerate():
    pop = build_tree(2, [(0, 1)], [0.0, 0.0])
    assert depth_target(pop, 1, 2, 123.0) == pytest.approx(123.0)


def test_depth_step_between_non_roots():
    pop = _stabilized_demo()
    moved = k_depth_target_step(pop, 0, 1, 2, DEMO_TOTAL, 0.0)
    assert moved == pytest.approx(31.25)
    assert pop.energy.per_node[0] == pytest.approx(468.75)
    assert pop.energy.per_node[1] == pytest.approx(131.25)


def test_depth_step_surplus_flows_to_root():
    pop = _stabilized_demo()
    k_depth_target_step(pop, 0, 1, 2, DEMO_TOTAL, 0.0)
    moved = k_depth_target_step(pop, 0, 5, 2, DEMO_TOTAL, 0.0)
    assert moved == pytest.approx(206.25)
    assert pop.energy.per_node[0] == pytest.approx(262.5)
    assert pop.energy.per_node[5] == pytest.approx(806.25)


def test_depth_step_root_pays_clamped_by_its_energy():
    pop = _stabilized_demo([100.0, 131.25, 65.625, 131.25, 262.5, 10.0])
    # node 0 is 162.5 below target; the root only holds 10
    moved = k_depth_target_step(pop, 5, 0, 2, DEMO_TOTAL, 0.0)
    assert moved == pytest.approx(10.0)
    assert pop.energy.per_node[5] == 0.0
    assert pop.energy.per_node[0] == pytest.approx(110.0)


def test_depth_step_two_roots_noop():
    net = TreeNetwork(4)
    net.add_edge(0, 1)
    net.add_edge(2, 3)
    pop = Population(net, EnergyState([10.0, 1.0, 10.0, 1.0]))
    assert k_depth_target_step(pop, 0, 2, 2, 22.0, 0.0) == 0.0


def test_depth_step_loss_hits_receiver_only():
    pop = _stabilized_demo([100.0, 131.25, 65.625, 131.25, 262.5, 500.0])
    before_root = pop.energy.per_node[5]
    moved = k_depth_target_step(pop, 5, 0, 2, DEMO_TOTAL, 0.25)
    assert moved == pytest.approx(162.5)
    assert pop.energy.per_node[5] == pytest.approx(before_root - 162.5)
    assert pop.energy.per_node[0] == pytest.approx(100.0 + 0.75 * 162.5)
    assert pop.energy.lost == pytest.approx(0.25 * 162.5)


def test_target_feasibility_on_grown_trees():
    for seed in range(5):
        rng = make_rng(seed)
        n = 14
        protocol = FormationProtocol.kary(2)
        pop = Population(TreeNetwork(n, arity_bound=2), EnergyState([1.0] * n))
        rng.shuffle(pop.w)
        while pop.network.edge_count < n - 1:
            u, v = sample_pair(rng, n)
            apply_formation_rule(protocol, pop, u, v)
        depth, height = true_depths(pop.network)
        pop.d = depth
        pop.h = [height] * n
        assert target_feasible(pop, 2, 1000.0)


# ---------------------------------------------------------------- loss model
def test_lossless_beta_is_zero_and_consumes_nothing():
    rng = make_rng(9)
    state_before = rng.getstate()
    assert sample_beta(LossModel.lossless(), rng) == 0.0
    assert rng.getstate() == state_before


def test_gaussian_beta_statistics():
    rng = make_rng(10)
    model = LossModel.normal(0.2, 0.05)
    draws = [sample_beta(model, rng) for _ in range(100_000)]
    mean = sum(draws) / len(draws)
    var = sum((x - mean) ** 2 for x in draws) / len(draws)
    assert abs(mean - 0.2) <= 0.005
    assert abs(math.sqrt(var) - 0.05) <= 0.005
    assert all(0.0 <= x <= 0.999 for x in draws)


def test_beta_clamped():
    model = LossModel.normal(0.0, 5.0)
    rng = make_rng(2)
    draws = [sample_beta(model, rng) for _ in range(2000)]
    assert min(draws) >= 0.0
    assert max(draws) <= 0.999


# ----------------------------------------------------- cross-cutting checks
@settings(max_examples=150, deadline=None)
@given(
    ep=st.floats(0.0, 1e6),
    ec=st.floats(0.0, 1e6),
    beta=st.floats(0.0, 0.9),
    kappa=st.floats(0.01, 0.99),
)
def test_steps_never_drive_energy_negative(ep, ec, beta, kappa):
    e = EnergyState([ep, ec])
    lambda_exchange_step(e, 0, 1, 2.0, beta)
    assert all(x >= 0.0 for x in e.per_node)
    e2 = EnergyState([ep, ec])
    kappa_transfer_step(e2, 0, 1, kappa, beta)
    assert all(x >= 0.0 for x in e2.per_node)


def test_conservation_across_random_protocol_mix():
    rng = make_rng(31)
    pop = _stabilized_demo()
    table = compute_ideal_energies(pop.network, DEMO_TOTAL)
    debited = 0.0
    lost_expected = 0.0
    for _ in range(2000):
        u, v = sample_pair(rng, 6)
        beta = sample_beta(LossModel.normal(0.2, 0.05), rng)
        choice = rng.randrange(3)
        if choice == 0:
            moved = abs(ideal_target_step(pop.energy, u, v, table, beta))
        elif choice == 1 and pop.network.parent[v] == u:
            moved = lambda_exchange_step(pop.energy, u, v, 2.0, beta)
        else:
            moved = abs(k_depth_target_step(pop, u, v, 2, DEMO_TOTAL, beta))
        lost_expected += beta * moved
    assert pop.energy.lost == pytest.approx(lost_expected, rel=1e-9)
    assert pop.energy.conservation_ok()


def test_parse_energy_protocol_specs():
    assert parse_energy_protocol("ideal") == IdealTarget()
    assert parse_energy_protocol("lambda:2.5") == LambdaExchange(2.5)
    assert parse_energy_protocol("rand") == RandExchange(2.0, 3.0)
    assert parse_energy_protocol("kappa:0.5") == KappaTransfer(0.5)
    assert parse_energy_protocol("kdepth:3") == DepthTarget(3)
    with pytest.raises(DomainError):
        parse_energy_protocol("lambda:1.5")
    with pytest.raises(DomainError):
        parse_energy_protocol("kappa:1.5")
    with pytest.raises(DomainError):
        parse_energy_protocol("magic")
