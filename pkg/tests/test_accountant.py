import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dphtc.accountant import (
    DEFAULT_ORDERS, AccountantError, RdpLedger, account_gaussian_steps, advantage_bound, audit, compose,
    gaussian_sigma, gaussian_step_costs, rdp_gaussian_step, to_dp,
)


def closed_form(steps, z, delta, orders=DEFAULT_ORDERS):
    return min(steps * a / (2 * z * z) - math.log(delta) / (a - 1) for a in orders)


def test_step_cost_examples():
    assert rdp_gaussian_step(2, 1, 1) == 1.0
    assert rdp_gaussian_step(3.5, 0, 0.7) == 0.0
    for sens in (0.1, 1.0, 7.0):
        assert math.isclose(rdp_gaussian_step(5.0, sens, 2 * sens), 5.0 / 8)
    assert rdp_gaussian_step(2, 1, 0) == math.inf
    with pytest.raises(AccountantError):
        rdp_gaussian_step(1.0, 1, 1)


def test_composition_examples():
    empty = RdpLedger()
    assert empty.rdp == (0.0,) * len(DEFAULT_ORDERS)
    ledger = compose(RdpLedger((2.0,)), [[0.01]] * 100)
    assert math.isclose(ledger.rdp[0], 1.0) and ledger.steps == 100
    a, b = [[0.1, 0.2]], [[0.3, 0.4], [0.5, 0.6]]
    base = RdpLedger((2.0, 3.0))
    assert compose(compose(base, a), b).rdp == pytest.approx(compose(base, a + b).rdp, abs=1e-15)
    with pytest.raises(AccountantError, match="grid"):
        compose(base, [[0.1]])


def test_to_dp_examples():
    spec = to_dp(RdpLedger((2.0,), (1.0,)), 0.01)
    assert math.isclose(spec.epsilon, 1 - math.log(0.01), rel_tol=1e-12)
    assert round(spec.epsilon, 4) == 5.6052
    zero = to_dp(RdpLedger(), 1e-5)
    assert zero.order == max(DEFAULT_ORDERS)
    assert math.isclose(zero.epsilon, -math.log(1e-5) / (max(DEFAULT_ORDERS) - 1))
    with pytest.raises(AccountantError):
        to_dp(RdpLedger(()), 0.1)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-9, 0.5), st.floats(1e-9, 0.5), st.integers(1, 10_000), st.floats(0.05, 5))
def test_epsilon_monotone_in_delta(d1, d2, steps, z):
    ledger = account_gaussian_steps(steps, z)
    lo, hi = sorted((d1, d2))
    assert to_dp(ledger, lo).epsilon >= to_dp(ledger, hi).epsilon


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 500), st.integers(0, 500), st.floats(0.1, 5), st.floats(0.01, 10))
def test_composition_is_additive(t1, t2, z, c):
    cost = gaussian_step_costs(DEFAULT_ORDERS, z, c)
    a = compose(compose(RdpLedger(), [cost] * t1), [cost] * t2)
    b = account_gaussian_steps(t1 + t2, z, c)
    assert a.steps == b.steps == t1 + t2
    assert a.rdp == pytest.approx(b.rdp, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("steps", [1, 1000, 100_000])
@pytest.mark.parametrize("z", [0.1, 0.5, 1.0, 3.0])
def test_closed_form(steps, z):
    got = to_dp(account_gaussian_steps(steps, z, clip_norm=0.37), 1e-5).epsilon
    assert abs(got - closed_form(steps, z, 1e-5)) <= 1e-9 * max(1.0, closed_form(steps, z, 1e-5))


def test_gaussian_sigma_examples():
    assert math.isclose(gaussian_sigma(1, 0.5, 1e-5), math.sqrt(2 * math.log(1.25e5)) / 0.5)
    assert round(gaussian_sigma(1, 0.5, 1e-5), 3) == 9.690
    assert math.isclose(gaussian_sigma(3, 0.5, 1e-5), 3 * gaussian_sigma(1, 0.5, 1e-5))
    with pytest.raises(AccountantError, match="epsilon"):
        gaussian_sigma(1, 1.5, 1e-5)


def test_advantage_bound_examples():
    assert advantage_bound(0) == 0
    assert round(advantage_bound(1), 4) == 1.7183
    assert round(advantage_bound(0.1), 4) == 0.1052
    assert advantage_bound(1000) == math.inf


def test_audit_report():
    report = audit(1.0, 0.5, 32, 400, 30)
    assert report["steps"] == 30 * (400 // 32)
    assert report["delta"] == 1 / 400
    assert math.isclose(report["epsilon"], closed_form(report["steps"], 1.0, 1 / 400))
    assert report["bound_vacuous"]
    assert audit(1.0, 0.5, 32, 400, 30, steps=7)["steps"] == 7
