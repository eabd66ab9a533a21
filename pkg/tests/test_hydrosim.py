"""Hydraulic solver and soil balance."""

import math
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from irrigsim.hydrosim import (
    ConfigurationError, EmitterClog, FaultInjectionError, FilterClog, PlantConfig, PlantState,
    SupplyLoss, SupplyRestore, apply_fault, flow_residual, settle, soil_increment, solve_flow, step,
)

NOMINAL = PlantConfig(
    supply_pressure_kpa=180.0, k_filter_clean=1e-4, k_lateral=5e-5,
    emitter_count=10, k_emitter=0.4, emitter_exponent=0.5,
)
OPEN = PlantState(valve_open=True)

# Frozen from the closed-form oracle below (x = 0.5 turns the emitter law into
# Q^2 = a^2 (S - b Q^2), so Q = a sqrt(S / (1 + a^2 b))).
NOMINAL_Q = 53.612046193052436
NOMINAL_P3 = 179.7125748502994
NOMINAL_P_END = 179.5688622754491


def closed_form_flow(cfg, filter_clog=0.0, emitter_clog=0.0):
    a = cfg.emitter_count * (1 - emitter_clog) * cfg.k_emitter
    b = cfg.k_filter_clean / (1 - filter_clog) ** 2 + cfg.k_lateral / 2
    return a * math.sqrt(cfg.supply_pressure_kpa / (1 + a * a * b))


def fixed_point_flow(cfg, filter_clog=0.0, emitter_clog=0.0, tol=1e-12):
    """Damped fixed-point iteration on the emitter law; any exponent."""
    kf = cfg.k_filter_clean / (1 - filter_clog) ** 2
    c = cfg.emitter_count * (1 - emitter_clog) * cfg.k_emitter
    q = 0.0
    for _ in range(100_000):
        p = max(cfg.supply_pressure_kpa - (kf + cfg.k_lateral / 2) * q * q, 0.0)
        new = 0.5 * q + 0.5 * c * p ** cfg.emitter_exponent
        if abs(new - q) <= tol * max(new, 1.0):
            return new
        q = new
    raise AssertionError("fixed point did not converge")


def test_closed_form_oracle_matches_frozen_value():
    assert closed_form_flow(NOMINAL) == pytest.approx(NOMINAL_Q, rel=1e-14)
    assert fixed_point_flow(NOMINAL) == pytest.approx(NOMINAL_Q, rel=1e-11)


class TestSolveFlow:
    def test_nominal(self):
        q, p = solve_flow(NOMINAL, OPEN)
        assert q == pytest.approx(NOMINAL_Q, rel=1e-12)
        assert p.p1_regulator == 180.0
        assert p.p2_pre_filter == 180.0
        assert p.p3_post_filter == pytest.approx(NOMINAL_P3, abs=1e-9)
        assert p.p_head == pytest.approx(NOMINAL_P3, abs=1e-9)
        assert p.p_end == pytest.approx(NOMINAL_P_END, abs=1e-9)

    def test_closed_valve(self):
        q, p = solve_flow(NOMINAL, PlantState(valve_open=False))
        assert q == 0.0
        assert (p.p2_pre_filter, p.p3_post_filter, p.p_head, p.p_end) == (0, 0, 0, 0)
        assert p.p1_regulator == 180.0

    def test_shutoff_closed(self):
        q, p = solve_flow(NOMINAL, PlantState(valve_open=True, shutoff_open=False))
        assert q == 0.0
        assert p.p1_regulator == 0.0
        assert p.p_head == p.p_end == 0.0

    def test_full_emitter_clog_zeroes_lateral_drop(self):
        q, p = solve_flow(NOMINAL, replace(OPEN, emitter_clog=1.0))
        assert q == 0.0
        assert p.p_head == p.p_end == 180.0

    @pytest.mark.parametrize("exponent", [0.3, 0.5, 0.7])
    def test_other_exponents_match_fixed_point(self, exponent):
        cfg = replace(NOMINAL, emitter_exponent=exponent, k_filter_clean=2e-3, k_lateral=2.5e-3)
        q, _ = solve_flow(cfg, OPEN)
        assert q == pytest.approx(fixed_point_flow(cfg), rel=1e-9)

    def test_linear_emitter_matches_quadratic_root(self):
        cfg = replace(NOMINAL, emitter_exponent=1.0, k_filter_clean=2e-3, k_lateral=2.5e-3)
        c = cfg.emitter_count * cfg.k_emitter
        b = cfg.k_filter_clean + cfg.k_lateral / 2
        # q = c (S - b q^2)  =>  b c q^2 + q - c S = 0
        expected = (-1 + math.sqrt(1 + 4 * b * c * c * cfg.supply_pressure_kpa)) / (2 * b * c)
        assert solve_flow(cfg, OPEN)[0] == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_non_finite_config(self, bad):
        with pytest.raises(ConfigurationError):
            solve_flow(replace(NOMINAL, k_lateral=bad), OPEN)

    def test_filter_fully_clogged_rejected(self):
        with pytest.raises(ConfigurationError):
            solve_flow(NOMINAL, replace(OPEN, filter_clog=1.0))


configs = st.builds(
    PlantConfig,
    supply_pressure_kpa=st.floats(150, 200),
    k_filter_clean=st.floats(1e-5, 1e-2),
    k_lateral=st.floats(1e-5, 1e-2),
    emitter_count=st.integers(1, 50),
    k_emitter=st.floats(0.05, 2.0),
    emitter_exponent=st.floats(0.3, 1.0),
)
clog = st.floats(0.0, 0.95)


@settings(max_examples=300, deadline=None)
@given(configs, clog, st.floats(0.0, 1.0))
def test_residual_vanishes(cfg, fc, ec):
    state = replace(OPEN, filter_clog=fc, emitter_clog=ec)
    q, _ = solve_flow(cfg, state)
    assert abs(flow_residual(cfg, state, q)) <= 1e-9 * max(q, 1e-300) or q == 0.0


# Beyond ~0.999 the lateral loss k*Q^2 drops below the float spacing of p_head,
# so the zero-drop signature is only checked where it is representable.
emitter_clog = st.one_of(st.floats(0.0, 0.999), st.just(1.0))


@settings(max_examples=300, deadline=None)
@given(configs, clog, emitter_clog)
def test_pressure_ordering(cfg, fc, ec):
    q, p = solve_flow(cfg, replace(OPEN, filter_clog=fc, emitter_clog=ec))
    if q > 0:
        assert p.p2_pre_filter >= p.p3_post_filter >= p.p_head >= p.p_end >= 0.0
        assert p.p_head - p.p_end > 0.0
    else:
        assert p.p_head - p.p_end == 0.0


@settings(max_examples=200, deadline=None)
@given(configs, clog, clog, st.floats(0.0, 1.0))
def test_monotone_in_filter_clog(cfg, c1, c2, ec):
    lo, hi = sorted((c1, c2))
    q_lo, _ = solve_flow(cfg, replace(OPEN, filter_clog=lo, emitter_clog=ec))
    q_hi, _ = solve_flow(cfg, replace(OPEN, filter_clog=hi, emitter_clog=ec))
    assert q_hi <= q_lo


@settings(max_examples=200, deadline=None)
@given(configs, clog, st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_monotone_in_emitter_clog(cfg, fc, e1, e2):
    lo, hi = sorted((e1, e2))
    q_lo, _ = solve_flow(cfg, replace(OPEN, filter_clog=fc, emitter_clog=lo))
    q_hi, _ = solve_flow(cfg, replace(OPEN, filter_clog=fc, emitter_clog=hi))
    assert q_hi <= q_lo


class TestStep:
    def test_no_source_no_sink(self):
        cfg = replace(NOMINAL, et_rate=0.0)
        s = step(cfg, PlantState(soil_moisture=0.3), 10.0)
        assert s.soil_moisture == 0.3
        assert s.tick == 1

    def test_linear_drawdown(self):
        cfg = replace(NOMINAL, et_rate=1e-4)
        s = step(cfg, PlantState(soil_moisture=0.5), 10.0)
        assert s.soil_moisture == pytest.approx(0.499, abs=1e-15)

    def test_clamps_at_field_capacity(self):
        cfg = replace(NOMINAL, soil_capacity_l=0.01, et_rate=0.0)
        s = step(cfg, replace(OPEN, soil_moisture=0.999), 10.0)
        assert s.soil_moisture == 1.0

    def test_clamps_at_zero(self):
        cfg = replace(NOMINAL, et_rate=1.0)
        assert step(cfg, PlantState(soil_moisture=0.2), 1.0).soil_moisture == 0.0

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError):
            step(NOMINAL, PlantState(), 0.0)

    def test_mass_balance_over_run(self):
        cfg = PlantConfig()
        state = settle(cfg, PlantState(soil_moisture=0.2))
        theta0 = state.soil_moisture
        budget = []
        for i in range(3000):
            state = replace(state, valve_open=(i // 500) % 2 == 0)
            settled = settle(cfg, state)
            budget.append(soil_increment(cfg, settled.flow_lph, 0.1))
            state = step(cfg, state, 0.1)
        assert 0.0 < state.soil_moisture < 1.0
        assert state.soil_moisture - theta0 == pytest.approx(math.fsum(budget), abs=1e-9 * len(budget))


class TestApplyFault:
    def test_supply_loss(self):
        s = apply_fault(OPEN, SupplyLoss())
        assert s.shutoff_open is False
        assert solve_flow(NOMINAL, s)[1].p1_regulator == 0.0
        assert apply_fault(s, SupplyRestore()).shutoff_open is True

    def test_filter_clog_setter_touches_nothing_else(self):
        s = apply_fault(OPEN, FilterClog(0.8))
        assert s.filter_clog == 0.8
        assert replace(s, filter_clog=0.0) == OPEN

    def test_emitter_clog_full_gives_zero_lateral_drop(self):
        s = settle(NOMINAL, apply_fault(OPEN, EmitterClog(1.0)))
        assert s.stations.p_head - s.stations.p_end == 0.0
        assert s.flow_lph == 0.0

    @pytest.mark.parametrize("fault", [FilterClog(1.0), FilterClog(-0.1), EmitterClog(1.1),
                                       EmitterClog(math.nan)])
    def test_out_of_range(self, fault):
        with pytest.raises(FaultInjectionError):
            apply_fault(OPEN, fault)
