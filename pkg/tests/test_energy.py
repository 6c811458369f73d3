import numpy as np
import pytest
from hypothesis import given, strategies as st

from ehfl.energy import (
    EnergyLedger,
    InsufficientEnergy,
    apply_charge,
    apply_idle,
    apply_transmit,
    sample_charge,
    start_training,
)


def test_sample_charge_degenerate():
    rng = np.random.default_rng(0)
    assert not any(sample_charge(rng, 0.0) for _ in range(1000))
    assert all(sample_charge(rng, 1.0) for _ in range(1000))


def test_sample_charge_rate():
    rng = np.random.default_rng(1)
    hits = sum(sample_charge(rng, 0.3) for _ in range(100_000))
    assert abs(hits / 100_000 - 0.3) < 0.01


@pytest.mark.parametrize("p", [0.0, 0.3, 1.0])
def test_sample_charge_consumes_one_draw(p):
    a, b = np.random.default_rng(5), np.random.default_rng(5)
    sample_charge(a, p)
    b.random()
    assert a.random() == b.random()


def test_apply_charge_examples():
    led = EnergyLedger()
    assert apply_charge(24, 25, True, led) == 25
    assert (led.harvested, led.wasted) == (1, 0)
    assert apply_charge(25, 25, True, led) == 25
    assert (led.harvested, led.wasted) == (1, 1)
    assert apply_charge(7, 25, False, led) == 7
    assert led.charge_events == 2


def test_transmit_examples():
    assert apply_transmit(5) == 4
    assert apply_transmit(1) == 0
    with pytest.raises(InsufficientEnergy):
        apply_transmit(0)


def test_training_examples():
    assert start_training(20, 20) == 0
    assert start_training(25, 20) == 5
    with pytest.raises(InsufficientEnergy):
        start_training(19, 20)


@pytest.mark.parametrize("b", [0, 25, 12])
def test_idle_examples(b):
    assert apply_idle(b) == b


@given(battery=st.integers(1, 25), charged=st.booleans())
def test_transmit_then_charge_matches_closed_form(battery, charged):
    led = EnergyLedger()
    after = apply_charge(apply_transmit(battery), 25, charged, led)
    assert after == max(battery - 1, 0) + int(charged)


@given(battery=st.integers(20, 25), charges=st.lists(st.booleans(), min_size=20, max_size=20))
def test_training_window_matches_closed_form_when_cap_not_hit(battery, charges):
    # Up-front deduction, then one (capped) charge per busy slot.
    led = EnergyLedger()
    b = start_training(battery, 20)
    for c in charges:
        b = apply_charge(b, 25, c, led)
    uncapped = max(battery - 20, 0) + sum(charges)
    assert b == min(uncapped, 25)
    assert led.wasted == max(uncapped - 25, 0)


def test_full_charge_reaches_train_cost_in_train_cost_slots():
    led = EnergyLedger()
    b = 0
    for slot in range(20):
        assert b < 20
        b = apply_charge(apply_idle(b), 25, True, led)
    assert b == 20


@given(
    seed=st.integers(0, 2**32 - 1),
    p=st.sampled_from([0.0, 0.1, 0.5, 1.0]),
    steps=st.integers(1, 300),
)
def test_random_walk_conservation(seed, p, steps):
    rng = np.random.default_rng(seed)
    led = EnergyLedger()
    batteries = [3, 0, 25]
    for _ in range(steps):
        for i, b in enumerate(batteries):
            choice = rng.integers(3)
            if choice == 0 and b >= 1:
                b = apply_transmit(b)
                led.consumed_tx += 1
            elif choice == 1 and b >= 20:
                b = start_training(b, 20)
                led.consumed_train += 20
            b = apply_charge(b, 25, sample_charge(rng, p), led)
            batteries[i] = b
        assert all(0 <= b <= 25 for b in batteries)
        assert sum(batteries) == 28 + led.harvested - led.consumed_total
