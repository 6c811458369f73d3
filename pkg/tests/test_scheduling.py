from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ehfl.scheduling import (
    assign_groups,
    elect_hubs,
    fedavg_decide,
    fedbacys_decide,
    fedseq_decide,
    in_deadline_window,
)
from ehfl.types import Action, ClientState, SimConfig, Update, derive_time


CFG = SimConfig(n_clients=10, n_epochs=3, slots_per_epoch=30, n_groups=3, train_cost=20, battery_cap=25)


def window_oracle(start, group, cfg):
    """Follow the finishing slot on the absolute timeline: it must fall in the group's
    active period and must not be that period's last (upload) slot."""
    finish = start + cfg.train_cost
    epochs_needed = finish // cfg.slots_per_epoch + 1
    big = SimConfig(**{**cfg.to_dict(), "n_epochs": epochs_needed})
    t = derive_time(finish, big)
    last_slot_of_window = (finish % cfg.slots_per_epoch) % cfg.group_round == cfg.group_round - 1
    return (not t.in_slack) and t.group_in_turn == group and not last_slot_of_window


def test_window_matches_timeline_oracle_exhaustively():
    for cfg in (CFG, SimConfig(n_clients=10, slots_per_epoch=30, n_groups=2, train_cost=20),
                SimConfig(n_clients=10, slots_per_epoch=32, n_groups=3, train_cost=7, battery_cap=10)):
        for g in range(cfg.n_groups):
            for s in range(3 * cfg.slots_per_epoch):
                assert in_deadline_window(s, g, cfg) == window_oracle(s, g, cfg), (s, g)


@pytest.mark.parametrize("slot, group, expected", [(13, 0, True), (0, 0, False), (28, 1, True)])
def test_window_examples(slot, group, expected):
    assert in_deadline_window(slot, group, CFG) is expected
    assert window_oracle(slot, group, CFG) is expected


def client(battery, group=0, pending=False, produced_epoch=0):
    upd = Update(delta=np.zeros(2), produced_epoch=produced_epoch, client_id=0) if pending else None
    return ClientState(id=0, battery=battery, group=group, model=np.zeros(2), shard=np.arange(3), pending_update=upd)


def at(slot):
    return derive_time(slot, CFG)


def test_fedbacys_examples():
    assert fedbacys_decide(client(25), at(13), CFG) is Action.START_TRAINING
    assert fedbacys_decide(client(25, pending=True), at(13), CFG) is Action.IDLE
    assert fedbacys_decide(client(3, group=1, pending=True), at(19), CFG) is Action.TRANSMIT


def test_fedbacys_transmit_needs_energy_and_own_window():
    assert fedbacys_decide(client(0, group=1, pending=True), at(19), CFG) is Action.IDLE
    assert fedbacys_decide(client(3, group=0, pending=True), at(19), CFG) is Action.IDLE
    assert fedbacys_decide(client(3, group=1, pending=True), at(18), CFG) is Action.IDLE


def test_fedavg_examples():
    assert fedavg_decide(client(25), at(0), CFG) is Action.START_TRAINING
    for s in range(0, 90, 7):
        assert fedavg_decide(client(0), at(s), CFG) is Action.IDLE
    assert fedavg_decide(client(10, pending=True), at(29), CFG) is Action.TRANSMIT
    # retraining over a pending update is allowed
    assert fedavg_decide(client(25, pending=True), at(3), CFG) is Action.START_TRAINING


def test_fedseq_examples():
    assert fedseq_decide(client(25, group=2), at(0), CFG) is Action.START_TRAINING
    for s in range(0, 90, 7):
        assert fedseq_decide(client(19, group=1), at(s), CFG) is Action.IDLE


def test_fedseq_vs_fedbacys_contrast_regenerated_from_window():
    # group 2 at slot 0: (0+20) mod 30 = 20 lies in [20, 29), so FedBacys trains too
    assert window_oracle(0, 2, CFG)
    assert fedbacys_decide(client(25, group=2), at(0), CFG) is Action.START_TRAINING
    # group 0 at slot 0 is the real contrast: outside the window, FedSeq still trains
    assert not window_oracle(0, 0, CFG)
    assert fedbacys_decide(client(25, group=0), at(0), CFG) is Action.IDLE
    assert fedseq_decide(client(25, group=0), at(0), CFG) is Action.START_TRAINING


def test_fedseq_blocks_on_fresh_update_only():
    assert fedseq_decide(client(25, pending=True, produced_epoch=1), at(35), CFG) is Action.IDLE
    assert fedseq_decide(client(25, pending=True, produced_epoch=0), at(35), CFG) is Action.START_TRAINING


def test_busy_client_makes_no_decision():
    c = client(25)
    c.busy_until = 20
    for decide in (fedbacys_decide, fedavg_decide, fedseq_decide):
        with pytest.raises(ValueError):
            decide(c, at(13), CFG)


@given(
    battery=st.integers(0, 25),
    group=st.integers(0, 2),
    pending=st.booleans(),
    produced=st.integers(0, 2),
    slot=st.integers(0, 89),
)
def test_policies_pure_and_affordable(battery, group, pending, produced, slot):
    c = client(battery, group=group, pending=pending, produced_epoch=produced)
    for decide in (fedbacys_decide, fedavg_decide, fedseq_decide):
        a = decide(c, at(slot), CFG)
        assert a == decide(c, at(slot), CFG)
        if a is Action.START_TRAINING:
            assert battery >= CFG.train_cost
        if a is Action.TRANSMIT:
            assert battery >= 1 and pending
    if fedbacys_decide(c, at(slot), CFG) is Action.START_TRAINING:
        assert in_deadline_window(slot, group, CFG)
        assert not pending


@pytest.mark.parametrize("n, g, sizes", [(10, 3, [4, 3, 3]), (100, 10, [10] * 10), (5, 5, [1] * 5)])
def test_assign_groups_sizes(n, g, sizes):
    a = assign_groups(n, g, np.random.default_rng(0))
    assert sorted(a.sizes(), reverse=True) == sizes
    assert sorted(np.concatenate([a.members(k) for k in range(g)]).tolist()) == list(range(n))


@given(n=st.integers(1, 200), g=st.integers(1, 200), seed=st.integers(0, 2**32))
def test_assign_groups_balanced(n, g, seed):
    g = min(g, n)
    a = assign_groups(n, g, np.random.default_rng(seed))
    assert max(a.sizes()) - min(a.sizes()) <= 1
    b = assign_groups(n, g, np.random.default_rng(seed))
    assert np.array_equal(a.membership, b.membership)


def test_assign_groups_rejects():
    with pytest.raises(ValueError):
        assign_groups(3, 4, np.random.default_rng(0))


def test_elect_hubs_singleton_and_replay():
    a = assign_groups(5, 5, np.random.default_rng(0))
    hubs = elect_hubs(a, 0, np.random.default_rng(1))
    assert [a.membership[h] for h in hubs] == list(range(5))

    a1 = assign_groups(10, 3, np.random.default_rng(7))
    a2 = assign_groups(10, 3, np.random.default_rng(7))
    r1, r2 = np.random.default_rng(42), np.random.default_rng(42)
    for epoch in range(5):
        h1, h2 = elect_hubs(a1, epoch, r1), elect_hubs(a2, epoch, r2)
        assert h1 == h2
        assert all(a1.membership[h] == g for g, h in enumerate(h1))
    assert len(a1.hubs) == 5


def test_elect_hubs_uniform():
    a = assign_groups(10, 1, np.random.default_rng(0))
    rng = np.random.default_rng(3)
    counts = Counter(elect_hubs(a, e, rng)[0] for e in range(10_000))
    assert len(counts) == 10
    for c in counts.values():
        assert abs(c / 10_000 - 0.1) < 0.01


def test_elect_hubs_rejects_gap():
    a = assign_groups(4, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        elect_hubs(a, 3, np.random.default_rng(0))
