"""Planning-layer tests: flow algebra, cost arithmetic, and the sizing
optimizer cross-checked against an independent HiGHS-based grid search."""

import numpy as np
import pytest

from pvpool.domain import (InputBundle, InverterCatalog, LoadMatrix,
                           SolarScenarioSet, SubsidyRule, Tariff,
                           TechEconParams, TimeGrid, check_dispatch)
from pvpool.sizing import (SizingEconomics, capex, investor_profit, opex,
                           pv_production, solve_sizing, split_flows,
                           subsidy_present_value, welfare_objective)
from pvpool.storage import StorageSpec, check_feasible

from oracles import sizing_point_value


def _params(**kw):
    base = dict(beta_pv_tiers=((0.0, 1.1),), beta_es=0.158,
                beta_es_use=0.0001, beta_mnt=0.01, grid_connection_cost=1.0,
                subsidy=SubsidyRule(), kappa=2.0, discount_rate=0.03,
                horizon_years=20, es_roundtrip_efficiency=0.9)
    base.update(kw)
    return TechEconParams(**base)


def _tariff(t_len, price=0.13, lam=0.06, tax=0.0, fixed=0.0):
    return Tariff(grid_energy_price=np.full(t_len, price), fixed_charge=fixed,
                  export_price=np.full(t_len, lam), export_tax=np.full(t_len, tax),
                  local_price=0.0)


def _toy_bundle(t_len=4, params=None, tariff=None):
    grid = TimeGrid(delta_hours=1.0, num_periods=t_len, periods_per_year=t_len)
    base = np.linspace(1.0, 2.5, t_len)
    loads = LoadMatrix(np.column_stack([base, base[::-1]]), ("a", "b"))
    alphas = np.clip(np.sin(np.linspace(0.3, 2.8, t_len)), 0.0, 1.0)
    scen = SolarScenarioSet(alphas[:, None], np.array([1.0]))
    return InputBundle(grid, loads, scen, tariff or _tariff(t_len),
                       params or _params())


_TOY_CATALOG = InverterCatalog(pv_options=((3.0, 0.8),),
                               es_options=((1.0, 0.3),))


def _decision_stub(pv=0.0, es_pow=0.0, pv_cost=0.0, es_cost=0.0):
    from pvpool.domain import SizingDecision
    pv_real = pv > 0.0 or pv_cost > 0.0
    es_real = es_pow > 0.0 or es_cost > 0.0
    return SizingDecision(pv_capacity_kw=pv, es_power_kw=es_pow,
                          es_energy_kwh=2.0 * es_pow,
                          pv_inverter_index=0 if pv_real else None,
                          pv_inverter_capacity_kw=pv if pv_real else 0.0,
                          pv_inverter_cost=pv_cost,
                          es_inverter_index=0 if es_real else None,
                          es_inverter_capacity_kw=es_pow if es_real else 0.0,
                          es_inverter_cost=es_cost)


def test_pv_production_hand_values():
    out = pv_production(np.array([0.0, 0.5, 1.0]), 50.0, 1.0)
    assert np.allclose(out, [0.0, 25.0, 50.0])
    assert np.all(pv_production(np.array([0.3, 0.9]), 0.0, 1.0) == 0.0)
    assert pv_production(np.array([1.0]), 50.0, 0.5)[0] == pytest.approx(25.0)


def test_split_flows_hand_values():
    gg, gs, g = split_flows(np.array([10.0]), np.array([0.0]),
                            np.array([0.0]), np.array([4.0]))
    assert (gg[0], gs[0], g[0]) == (6.0, 0.0, 4.0)
    gg, gs, g = split_flows(np.array([2.0]), np.array([1.0]),
                            np.array([0.0]), np.array([5.0]))
    assert (gg[0], gs[0], g[0]) == (0.0, 2.0, 2.0)
    load = np.array([3.0, 7.0])
    gg, gs, g = split_flows(load, np.zeros(2), np.zeros(2), load)
    assert np.all(gg == 0.0) and np.all(gs == 0.0) and np.all(g == load)


def test_split_flows_balance_identity():
    rng = np.random.default_rng(11)
    for _ in range(200):
        t_len = int(rng.integers(1, 6))
        load = rng.uniform(0.0, 5.0, t_len)
        c = rng.uniform(0.0, 2.0, t_len)
        d = rng.uniform(0.0, 2.0, t_len)
        gen = rng.uniform(0.0, 6.0, t_len)
        gg, gs, g = split_flows(load, c, d, gen)
        assert np.allclose(gen + d + gg, load + c + gs, atol=1e-12)
        assert np.all(np.minimum(gg, gs) == 0.0)
        assert np.all(g <= load + 1e-12)


def test_capex_no_build_is_free():
    params = _params(grid_connection_cost=500.0)
    assert capex(_decision_stub(), params) == 0.0


def test_capex_component_sum_at_utility_scale():
    params = _params(beta_pv_tiers=((0.0, 1680.0), (100.0, 1580.0)),
                     beta_es=158.0, grid_connection_cost=2000.0)
    decision = _decision_stub(pv=50.0, es_pow=63.5, pv_cost=3600.0,
                              es_cost=4572.0)
    # 50 kW priced at 1.68 EUR/W plus 127 kWh at 158 EUR/kWh
    expected = 3600.0 + 4572.0 + 1680.0 * 50.0 + 158.0 * 127.0 + 2000.0
    assert capex(decision, params) == pytest.approx(expected)
    assert capex(decision, params) == pytest.approx(114238.0)


def test_capex_tier_boundary_reprices_whole_build():
    params = _params(beta_pv_tiers=((0.0, 1100.0), (100.0, 950.0)),
                     grid_connection_cost=0.0)
    just_below = capex(_decision_stub(pv=99.0), params)
    at_threshold = capex(_decision_stub(pv=100.0), params)
    assert just_below == pytest.approx(99.0 * 1100.0)
    assert at_threshold == pytest.approx(100.0 * 950.0)
    assert at_threshold < just_below


def test_opex_idle_system_is_maintenance_only():
    from pvpool.domain import DispatchSeries
    t_len = 3
    z = np.zeros(t_len)
    dispatch = DispatchSeries(z, z, z, z, z, z, np.zeros(t_len + 1))
    params = _params(beta_mnt=12.5)
    assert opex(dispatch, _decision_stub(pv=4.0), params,
                _tariff(t_len)) == pytest.approx(50.0)


def test_opex_utilization_hand_value():
    from pvpool.domain import DispatchSeries
    ones = np.ones(2)
    z = np.zeros(2)
    dispatch = DispatchSeries(ones, ones, z, z, z, z, np.zeros(3))
    params = _params(beta_es_use=0.01, beta_mnt=0.0)
    assert opex(dispatch, _decision_stub(), params,
                _tariff(2)) == pytest.approx(0.04)


def test_opex_export_tax_term():
    from pvpool.domain import DispatchSeries
    z = np.zeros(2)
    surplus = np.array([3.0, 1.0])
    dispatch = DispatchSeries(z, z, surplus, z, surplus, z, np.zeros(3))
    params = _params(beta_es_use=0.0, beta_mnt=0.0)
    assert opex(dispatch, _decision_stub(), params,
                _tariff(2, tax=0.0)) == 0.0
    assert opex(dispatch, _decision_stub(), params,
                _tariff(2, tax=0.02)) == pytest.approx(0.08)
    # a half-year dispatch doubled up to a full year
    assert opex(dispatch, _decision_stub(), params, _tariff(2, tax=0.02),
                year_scale=2.0) == pytest.approx(0.16)


def _econ_stub(**kw):
    base = dict(capex_pv_inverter=0.0, capex_es_inverter=0.0, capex_pv=0.0,
                capex_es=0.0, capex_grid=0.0, capex_total=0.0,
                annual_grid_cost_without=0.0, annual_grid_cost_with=0.0,
                annual_local_energy=0.0, annual_export_revenue=0.0,
                annual_export_tax=0.0, annual_utilization_cost=0.0,
                annual_maintenance_cost=0.0, annual_opex=0.0,
                subsidy_amount=0.0, year_scale=1.0, pvf=1.0)
    base.update(kw)
    return SizingEconomics(**base)


def test_investor_profit_single_year_hand_case():
    params = _params(discount_rate=0.0, horizon_years=1,
                     subsidy=SubsidyRule(rate_per_kw=1.0, max_capacity_kw=10.0))
    eco = _econ_stub(capex_total=80.0, annual_local_energy=100.0,
                     annual_export_revenue=10.0, annual_opex=20.0,
                     subsidy_amount=5.0)
    assert investor_profit(1.0, eco, params) == pytest.approx(15.0)


def test_investor_profit_is_pure_cost_without_income():
    params = _params()
    eco = _econ_stub(capex_total=40.0, annual_opex=3.0,
                     annual_local_energy=50.0)
    profit = investor_profit(0.0, eco, params)
    assert profit == pytest.approx(-40.0 - params.present_value_factor() * 3.0)
    assert profit < 0.0


def test_subsidy_present_value_placement():
    annual = _params(discount_rate=0.0, horizon_years=3,
                     subsidy=SubsidyRule(rate_per_kw=1.0, annual=True))
    once = _params(discount_rate=0.0, horizon_years=3,
                   subsidy=SubsidyRule(rate_per_kw=1.0))
    assert subsidy_present_value(5.0, annual) == pytest.approx(15.0)
    assert subsidy_present_value(5.0, once) == pytest.approx(5.0)
    assert subsidy_present_value(0.0, annual) == 0.0


def test_no_sun_means_no_build():
    t_len = 4
    grid = TimeGrid(delta_hours=1.0, num_periods=t_len, periods_per_year=t_len)
    loads = LoadMatrix(np.full((t_len, 2), 1.5), ("a", "b"))
    scen = SolarScenarioSet(np.zeros((t_len, 2)), np.array([0.5, 0.5]))
    bundle = InputBundle(grid, loads, scen, _tariff(t_len, fixed=0.01), _params())
    res = solve_sizing(bundle, _TOY_CATALOG)
    assert res.decision.pv_capacity_kw == 0.0
    assert res.decision.es_power_kw == 0.0
    assert not res.decision.builds_anything
    eco = res.economics
    no_build_bill = eco.pvf * eco.annual_grid_cost_without
    assert res.objective == pytest.approx(-no_build_bill, rel=1e-12)
    assert no_build_bill + res.objective == pytest.approx(0.0, abs=1e-9)


def test_pinned_point_matches_independent_oracle():
    bundle = _toy_bundle()
    rng = np.random.default_rng(31)
    points = [(float(rng.uniform(0.0, 3.0)), float(rng.uniform(0.0, 1.0)))
              for _ in range(12)] + [(0.0, 0.0), (3.0, 1.0)]
    for pv, es in points:
        got = solve_sizing(bundle, _TOY_CATALOG, pv_capacity_fixed=pv,
                           es_power_fixed=es)
        want = sizing_point_value(bundle, _TOY_CATALOG.pv_options,
                                  _TOY_CATALOG.es_options, pv, es)
        assert got.objective == pytest.approx(want, rel=1e-6, abs=1e-6), (pv, es)


def test_free_optimum_tops_capacity_grid_search():
    bundle = _toy_bundle()
    res = solve_sizing(bundle, _TOY_CATALOG)
    pv_grid = np.arange(0.0, 3.0 + 1e-9, 0.1)
    es_grid = np.arange(0.0, 1.0 + 1e-9, 0.1)
    values = np.empty((pv_grid.size, es_grid.size))
    for i, pv in enumerate(pv_grid):
        for j, es in enumerate(es_grid):
            values[i, j] = sizing_point_value(
                bundle, _TOY_CATALOG.pv_options, _TOY_CATALOG.es_options,
                float(pv), float(es))
    best_lattice = values.max()
    assert res.objective >= best_lattice - 1e-7
    # the free optimum can beat the lattice only by less than one grid step
    step = max(np.abs(np.diff(values, axis=0)).max(),
               np.abs(np.diff(values, axis=1)).max())
    assert res.objective - best_lattice <= 1.5 * step + 1e-9


def test_objective_invariant_to_local_price():
    bundle = _toy_bundle()
    res_a = solve_sizing(bundle, _TOY_CATALOG)
    shifted = InputBundle(bundle.grid, bundle.loads, bundle.scenarios,
                          bundle.tariff.with_local_price(0.25), bundle.params)
    res_b = solve_sizing(shifted, _TOY_CATALOG)
    assert res_a.objective == res_b.objective
    assert res_a.decision == res_b.decision


def test_net_benefit_never_negative_on_random_instances():
    rng = np.random.default_rng(23)
    for trial in range(10):
        t_len = int(rng.integers(3, 7))
        n_scen = int(rng.integers(1, 3))
        grid = TimeGrid(delta_hours=0.5, num_periods=t_len,
                        periods_per_year=t_len)
        loads = LoadMatrix(rng.uniform(0.0, 4.0, (t_len, 2)), ("a", "b"))
        probs = rng.uniform(0.2, 1.0, n_scen)
        scen = SolarScenarioSet(rng.uniform(0.0, 1.0, (t_len, n_scen)),
                                probs / probs.sum())
        tariff = Tariff(grid_energy_price=rng.uniform(0.05, 0.3, t_len),
                        fixed_charge=float(rng.uniform(0.0, 0.02)),
                        export_price=rng.uniform(0.0, 0.08, t_len),
                        export_tax=rng.uniform(0.0, 0.02, t_len),
                        local_price=0.0)
        params = _params(beta_pv_tiers=((0.0, float(rng.uniform(0.5, 2.0))),
                                        (2.0, float(rng.uniform(0.3, 0.5)))),
                         beta_es=float(rng.uniform(0.05, 0.3)),
                         grid_connection_cost=float(rng.uniform(0.0, 2.0)),
                         subsidy=SubsidyRule(rate_per_kw=float(rng.uniform(0.0, 0.1)),
                                             max_capacity_kw=2.5))
        bundle = InputBundle(grid, loads, scen, tariff, params)
        res = solve_sizing(bundle, _TOY_CATALOG)
        net = res.economics.pvf * res.economics.annual_grid_cost_without \
            + res.objective
        assert net >= -1e-6, (trial, net)
        recomputed = welfare_objective(res.economics, params)
        assert res.objective == pytest.approx(recomputed, rel=1e-9, abs=1e-12)


def test_value_concave_along_capacity_axes():
    # single tier, no subsidy, inverter fixed over the sampled segment
    bundle = _toy_bundle()
    pv_line = [solve_sizing(bundle, _TOY_CATALOG, pv_capacity_fixed=p,
                            es_power_fixed=0.4).objective
               for p in np.linspace(0.2, 3.0, 8)]
    es_line = [solve_sizing(bundle, _TOY_CATALOG, pv_capacity_fixed=1.5,
                            es_power_fixed=e).objective
               for e in np.linspace(0.1, 1.0, 8)]
    for line in (pv_line, es_line):
        for left, mid, right in zip(line, line[1:], line[2:]):
            assert mid >= 0.5 * (left + right) - 1e-6


def test_solution_dispatches_are_feasible():
    bundle = _toy_bundle(t_len=6)
    res = solve_sizing(bundle, _TOY_CATALOG)
    assert res.flags == ()
    spec = StorageSpec.from_sizing(res.decision, bundle.params)
    l_agg = bundle.loads.aggregate()
    for dispatch in res.dispatches:
        assert check_dispatch(dispatch, l_agg, tol=1e-6) == []
        assert check_feasible(spec, dispatch.charge, dispatch.discharge,
                              bundle.grid.delta_hours, tol=1e-6) == []
        assert np.all(np.minimum(dispatch.grid_import, dispatch.surplus) == 0.0)


def test_pinned_capacities_respected():
    bundle = _toy_bundle()
    free = solve_sizing(bundle, _TOY_CATALOG)
    pinned = solve_sizing(bundle, _TOY_CATALOG, pv_capacity_fixed=2.0,
                          es_power_fixed=0.5)
    assert pinned.decision.pv_capacity_kw == pytest.approx(2.0)
    assert pinned.decision.es_power_kw == pytest.approx(0.5)
    assert pinned.objective <= free.objective + 1e-9


def test_solve_sizing_is_deterministic():
    bundle = _toy_bundle()
    a = solve_sizing(bundle, _TOY_CATALOG)
    b = solve_sizing(bundle, _TOY_CATALOG)
    assert a.objective == b.objective
    assert a.decision == b.decision
    for da, db in zip(a.dispatches, b.dispatches):
        assert da.charge.tobytes() == db.charge.tobytes()
        assert da.to_consumers.tobytes() == db.to_consumers.tobytes()


def test_expected_served_weights_scenarios():
    t_len = 4
    grid = TimeGrid(delta_hours=1.0, num_periods=t_len, periods_per_year=t_len)
    loads = LoadMatrix(np.full((t_len, 1), 2.0), ("a",))
    alphas = np.column_stack([np.full(t_len, 0.8), np.zeros(t_len)])
    scen = SolarScenarioSet(alphas, np.array([0.25, 0.75]))
    bundle = InputBundle(grid, loads, scen, _tariff(t_len), _params())
    res = solve_sizing(bundle, _TOY_CATALOG)
    manual = sum(p * d.to_consumers for p, d in zip(res.probabilities,
                                                    res.dispatches))
    assert np.allclose(res.expected_served(), manual, atol=1e-12)
