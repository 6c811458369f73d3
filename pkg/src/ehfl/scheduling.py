"""Per-slot decision policies and group/hub assignment.

All policies are pure: they read one client's slot-start state and the time
index and return an :class:`Action`. Energy is never touched here; the engine
applies the chosen action and declines anything the battery cannot cover.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ehfl.types import Action, ClientState, GroupAssignment, Scheme, SimConfig, TimeIndex


def in_deadline_window(slot: int, group: int, config: SimConfig) -> bool:
    """True if training started at ``slot`` finishes inside ``group``'s active period.

    Checks ``g*R <= (slot + train_cost) mod S < (g+1)*R - 1``; the strict upper
    bound keeps the window's aggregation slot free of completions.
    """
    if not 0 <= group < config.n_groups:
        raise ValueError(f"group {group} outside [0, {config.n_groups})")
    r = config.group_round
    finish = (slot + config.train_cost) % config.slots_per_epoch
    return group * r <= finish < (group + 1) * r - 1


def is_aggregation_slot(time: TimeIndex, group: int, config: SimConfig) -> bool:
    """Last slot of ``group``'s window in the current epoch (never a slack slot)."""
    if time.in_slack or time.group_in_turn != group:
        return False
    offset = time.slot % config.slots_per_epoch
    return offset % config.group_round == config.group_round - 1


def is_epoch_end(time: TimeIndex, config: SimConfig) -> bool:
    return time.slot % config.slots_per_epoch == config.slots_per_epoch - 1


def _require_idle(client: ClientState, time: TimeIndex) -> None:
    if client.is_busy(time.slot):
        raise ValueError(f"client {client.id} is busy until slot {client.busy_until}; it makes no decision at {time.slot}")


def _group_upload(client: ClientState, time: TimeIndex, config: SimConfig) -> bool:
    return (
        client.pending_update is not None
        and client.battery >= 1
        and is_aggregation_slot(time, client.group, config)
    )


def fedbacys_decide(client: ClientState, time: TimeIndex, config: SimConfig) -> Action:
    _require_idle(client, time)
    if _group_upload(client, time, config):
        return Action.TRANSMIT
    if (
        client.battery >= config.train_cost
        and client.pending_update is None
        and in_deadline_window(time.slot, client.group, config)
    ):
        return Action.START_TRAINING
    return Action.IDLE


def fedavg_decide(client: ClientState, time: TimeIndex, config: SimConfig) -> Action:
    """Upload to the server at the epoch's last slot, otherwise train whenever affordable.

    Retraining while an update is pending is allowed; the newer update replaces
    the older one when it completes.
    """
    _require_idle(client, time)
    if is_epoch_end(time, config) and client.pending_update is not None and client.battery >= 1:
        return Action.TRANSMIT
    if client.battery >= config.train_cost:
        return Action.START_TRAINING
    return Action.IDLE


def fedseq_decide(client: ClientState, time: TimeIndex, config: SimConfig) -> Action:
    """Group-windowed upload as in FedBacys, but greedy training with no deadline window.

    Training is blocked only while the client holds an un-uploaded update trained
    from this epoch's model; an update from an earlier epoch is stale and may be
    replaced.
    """
    _require_idle(client, time)
    if _group_upload(client, time, config):
        return Action.TRANSMIT
    pending = client.pending_update
    fresh = pending is not None and pending.produced_epoch == time.epoch
    if client.battery >= config.train_cost and not fresh:
        return Action.START_TRAINING
    return Action.IDLE


Policy = Callable[[ClientState, TimeIndex, SimConfig], Action]

POLICIES: dict[Scheme, Policy] = {
    Scheme.FEDBACYS: fedbacys_decide,
    Scheme.FEDAVG: fedavg_decide,
    Scheme.FEDSEQ: fedseq_decide,
}


def policy_for(scheme: Scheme | str) -> Policy:
    return POLICIES[Scheme.parse(scheme)]


def assign_groups(n_clients: int, n_groups: int, rng: np.random.Generator) -> GroupAssignment:
    """Slice a random permutation of the clients into ``n_groups`` balanced groups."""
    if n_groups < 1 or n_clients < 1 or n_groups > n_clients:
        raise ValueError(f"cannot split {n_clients} clients into {n_groups} groups")
    membership = np.empty(n_clients, dtype=np.int64)
    for g, chunk in enumerate(np.array_split(rng.permutation(n_clients), n_groups)):
        membership[chunk] = g
    return GroupAssignment(membership=membership, n_groups=n_groups)


def elect_hubs(assignment: GroupAssignment, epoch: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Draw one hub per group, uniformly among its members, and record it for ``epoch``."""
    hubs = []
    for g in range(assignment.n_groups):
        members = assignment.members(g)
        hubs.append(int(members[rng.integers(len(members))]))
    result = tuple(hubs)
    if epoch == len(assignment.hubs):
        assignment.hubs.append(result)
    elif 0 <= epoch < len(assignment.hubs):
        assignment.hubs[epoch] = result
    else:
        raise ValueError(f"hubs recorded for {len(assignment.hubs)} epochs; cannot elect for epoch {epoch}")
    return result
