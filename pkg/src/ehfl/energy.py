"""Battery dynamics: Bernoulli harvesting, capped charging, transmit and training costs.

Within a slot the engine deducts the cost of the chosen action first and then
applies that slot's charge, so a transmitting client ends the slot at
``max(E - 1, 0) + charge`` and a training client, ``train_cost`` slots after
starting, at ``max(E - train_cost, 0) + charges`` (each charge capped).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InsufficientEnergy(Exception):
    """The requested action costs more battery than the client holds; it is declined."""


@dataclass
class EnergyLedger:
    """Cumulative energy counters for the whole network.

    ``harvested`` counts charge events that landed in a battery; events that hit
    a full battery go to ``wasted`` instead, so ``harvested + wasted`` is the
    number of charge events.
    """

    consumed_tx: int = 0
    consumed_train: int = 0
    harvested: int = 0
    wasted: int = 0

    @property
    def consumed_total(self) -> int:
        return self.consumed_tx + self.consumed_train

    def expected_stored(self, n_clients: int, init_battery: int) -> int:
        """Total battery the network should hold, given everything booked so far."""
        return n_clients * init_battery + self.harvested - self.consumed_total

    @property
    def charge_events(self) -> int:
        return self.harvested + self.wasted

    def snapshot(self) -> EnergyLedger:
        return EnergyLedger(self.consumed_tx, self.consumed_train, self.harvested, self.wasted)


def sample_charge(rng: np.random.Generator, charge_prob: float) -> bool:
    # Exactly one uniform draw per call, whatever the probability.
    return bool(rng.random() < charge_prob)


def apply_charge(battery: int, cap: int, charged: bool, ledger: EnergyLedger) -> int:
    if not charged:
        return battery
    if battery >= cap:
        ledger.wasted += 1
        return cap
    ledger.harvested += 1
    return battery + 1


def apply_transmit(battery: int) -> int:
    if battery < 1:
        raise InsufficientEnergy(f"transmit needs 1 unit, battery holds {battery}")
    return battery - 1


def start_training(battery: int, train_cost: int) -> int:
    """Deduct the full training cost up front.

    A client may only start if it can pay for the whole session; otherwise
    :class:`InsufficientEnergy` is raised and the caller falls back to idling.
    """
    if battery < train_cost:
        raise InsufficientEnergy(f"training needs {train_cost} units, battery holds {battery}")
    return battery - train_cost


def apply_idle(battery: int) -> int:
    return battery
