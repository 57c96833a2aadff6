import dataclasses
import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import ndtri

from countyflow.core import DateRange, LagSpec, build_calendar
from countyflow.ingest import TripPanel
from countyflow.risk import DAILY_SYNCHRONOUS, PERIOD_END
from countyflow.stats import build_design, fit_double_risk
from countyflow.synth import (
    ConstructionError,
    EpiParams,
    GravityParams,
    SyntheticCounty,
    SyntheticWorld,
    generate_loglinear,
    gravity_flows,
    make_rng,
    make_world,
    normal_deviates,
    run_epidemic,
    simulate_epidemic,
)

D = dt.date
CAL = build_calendar(D(2020, 3, 2), D(2020, 3, 27))
PERIOD = DateRange(D(2020, 3, 9), D(2020, 3, 20))
BETA = (0.01, -0.02, 0.015, 0.1)


def two_county_world(k=0.01, **epi):
    counties = tuple(
        SyntheticCounty(10001 + i, 1000, 10.0 * i, 0.0, 10, 50, 5, 50000) for i in range(2)
    )
    return SyntheticWorld(counties, 0, GravityParams(k=k), EpiParams(**epi))


def test_two_county_gravity_hand_value():
    panel = gravity_flows(two_county_world(), CAL)
    assert np.allclose(panel.trips, 100.0, rtol=1e-15)
    assert len(panel) == 2 * len(CAL)


def test_gravity_symmetry_and_linearity():
    w = make_world(6, 11)
    sym = dataclasses.replace(w, counties=tuple(dataclasses.replace(c, population=5000) for c in w.counties))
    p = gravity_flows(sym, CAL)
    e = {(int(o), int(j)): t for o, j, t in zip(p.origin, p.destination, p.trips)}
    assert all(e[(o, j)] == pytest.approx(e[(j, o)], rel=1e-15) for o, j in e)
    double = dataclasses.replace(w, gravity=GravityParams(k=2 * w.gravity.k))
    assert np.array_equal(gravity_flows(double, CAL).trips, 2 * gravity_flows(w, CAL).trips)


def test_coincident_centroids_rejected():
    w = two_county_world()
    same = dataclasses.replace(w, counties=tuple(dataclasses.replace(c, x=0.0) for c in w.counties))
    with pytest.raises(ValueError):
        gravity_flows(same, CAL)


def test_params_validation():
    with pytest.raises(ValueError):
        GravityParams(k=0)
    with pytest.raises(ValueError):
        GravityParams(distance_exponent=-1)
    with pytest.raises(ValueError):
        EpiParams(recovery_rate=0)
    with pytest.raises(ValueError):
        EpiParams(reporting_fraction=1.5)


def test_rng_contract():
    rng = make_rng(42)
    u = np.random.Generator(np.random.PCG64(42)).random(5)
    assert np.array_equal(normal_deviates(rng, 5), ndtri(u + 2.0**-54))
    assert np.all(np.isfinite(normal_deviates(make_rng(0), 10_000)))


@given(st.integers(0, 2**64 - 1), st.integers(2, 30))
@settings(max_examples=25, deadline=None)
def test_world_determinism(seed, n):
    a, b = make_world(n, seed), make_world(n, seed)
    assert a == b
    assert gravity_flows(a, CAL) == gravity_flows(b, CAL)
    assert len(a.demographics()) == n


def test_no_transmission_paths():
    w = two_county_world(seed_county=10001, seed_cases=10, beta_internal=0.0, import_coefficient=0.0)
    traj = run_epidemic(w, TripPanel.from_arrays(CAL, [], [], [], []))
    assert np.all(traj.cumulative_infections[0] == 10)
    assert np.all(traj.cumulative_infections[1] == 0)
    assert np.all(traj.reported[0] == 5)


def test_epidemic_conservation_and_monotonicity():
    w = make_world(15, 4, GravityParams(k=1e-5), EpiParams(beta_internal=0.3, import_coefficient=0.05), epicenter=True)
    panel = gravity_flows(w, CAL)
    traj = run_epidemic(w, panel)
    P = w.population[:, None]
    assert np.allclose(traj.S + traj.I + traj.R, P, rtol=1e-12, atol=0)
    assert np.all(np.diff(traj.cumulative_infections, axis=1) >= 0)
    more = dataclasses.replace(w, epi=dataclasses.replace(w.epi, import_coefficient=0.2))
    assert np.all(run_epidemic(more, panel).cumulative_infections >= traj.cumulative_infections - 1e-9)
    cases = simulate_epidemic(w, panel, CAL)
    assert cases.end == CAL.end_date
    assert np.all(np.diff(cases.values, axis=1) >= 0)


def test_causal_isolation_after_flows_stop():
    w = make_world(5, 9, GravityParams(k=1e-4), EpiParams(beta_internal=0.0, import_coefficient=0.1), epicenter=True)
    panel = gravity_flows(w, CAL)
    b = 10002
    cut = 5
    keep = ~((panel.destination == b) & (panel.day >= cut))
    isolated = TripPanel.from_arrays(CAL, panel.day[keep], panel.origin[keep], panel.destination[keep], panel.trips[keep])
    traj = run_epidemic(w, isolated)
    col = (CAL.days[cut] - CAL.start_date).days
    k = list(w.fips).index(b)
    # with no local transmission and no imports, B's cumulative infections freeze
    assert traj.cumulative_infections[k, col - 1] > 0
    assert np.all(traj.cumulative_infections[k, col:] == traj.cumulative_infections[k, col - 1])


@pytest.mark.parametrize("weighting", [DAILY_SYNCHRONOUS, PERIOD_END])
@pytest.mark.parametrize("lag", [0, 1, 2, 3])
def test_zero_noise_recovery(weighting, lag):
    w = make_world(60, 7)
    panel = gravity_flows(w, CAL)
    cases = generate_loglinear(w, panel, PERIOD, LagSpec(lag), 0.8, BETA, -1.0, weighting=weighting)
    fit = fit_double_risk(build_design(panel, cases, w.demographics(), PERIOD, LagSpec(lag), weighting=weighting))
    assert fit.alpha == pytest.approx(0.8, abs=1e-6)
    assert np.allclose(fit.beta, BETA, atol=1e-6)
    assert fit.gamma == pytest.approx(-1.0, abs=1e-6)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-9)


def test_loglinear_is_seeded_and_noise_changes_values():
    w = make_world(30, 3)
    panel = gravity_flows(w, CAL)
    a = generate_loglinear(w, panel, PERIOD, LagSpec(1), 0.8, BETA, -1.0, 0.1, seed=5)
    b = generate_loglinear(w, panel, PERIOD, LagSpec(1), 0.8, BETA, -1.0, 0.1, seed=5)
    c = generate_loglinear(w, panel, PERIOD, LagSpec(1), 0.8, BETA, -1.0, 0.1, seed=6)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert np.all(np.diff(a.values, axis=1) >= 0)


def test_loglinear_rejects_zero_er():
    w = make_world(10, 3)
    # only the bootstrap county sends trips, and only to one destination
    boot = w.seed_county
    target = int(next(f for f in w.fips if f != boot))
    panel = gravity_flows(w, CAL, origins=[boot], destinations=[target])
    with pytest.raises(ConstructionError, match="external risk is zero"):
        generate_loglinear(w, panel, PERIOD, LagSpec(1), 0.8, BETA, -1.0)
