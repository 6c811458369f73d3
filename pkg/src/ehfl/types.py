"""Shared vocabulary for the simulator: configuration, actions, client state, time."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

if TYPE_CHECKING:
    from ehfl.learning import TrainingJob

# A model is a flat float64 vector of fixed dimension d.
ModelParams = np.ndarray

MAX_SEED = 2**64 - 1


class ConfigError(ValueError):
    """Raised for a configuration that is malformed or semantically invalid."""


class InvariantViolation(RuntimeError):
    """Raised by the engine when an internal consistency check fails."""


class Scheme(str, enum.Enum):
    FEDBACYS = "fedbacys"
    FEDAVG = "fedavg"
    FEDSEQ = "fedseq"

    @classmethod
    def parse(cls, value: str | Scheme) -> Scheme:
        if isinstance(value, Scheme):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(s.value for s in cls)
            raise ConfigError(f"unknown scheme {value!r} (expected one of: {names})") from None


class Action(str, enum.Enum):
    TRANSMIT = "transmit"
    START_TRAINING = "start_training"
    IDLE = "idle"


@dataclass(frozen=True)
class SimConfig:
    """Every knob of one simulation run.

    ``battery_cap`` defaults to ``train_cost + 5``. ``partition`` is ``"iid"`` or
    ``"dirichlet"``; the latter reads ``dirichlet_alpha``. The trailing fields
    (``aggregation`` onwards) describe the learning task and data, not the
    energy/scheduling model.
    """

    n_clients: int = 20
    n_epochs: int = 100
    slots_per_epoch: int = 30
    n_groups: int = 5
    train_cost: int = 20
    charge_prob: float = 0.5
    battery_cap: int | None = None
    init_battery: int = 0
    learning_rate: float = 0.05
    n_batches: int = 5
    scheme: Scheme = Scheme.FEDBACYS
    partition: str = "iid"
    dirichlet_alpha: float | None = None
    seed: int = 0
    aggregation: str = "sum"
    batch_size: int | None = None
    samples_per_client: int = 50
    test_samples: int = 1000
    n_classes: int = 4
    feature_dim: int = 8
    cluster_spread: float = 1.0
    data_path: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        object.__setattr__(self, "partition", str(self.partition).strip().lower())
        object.__setattr__(self, "aggregation", str(self.aggregation).strip().lower())
        if self.battery_cap is None:
            object.__setattr__(self, "battery_cap", self.train_cost + 5)
        self.validate()

    def validate(self) -> None:
        positive_ints = (
            "n_clients", "n_epochs", "slots_per_epoch", "n_groups", "train_cost",
            "battery_cap", "n_batches", "samples_per_client", "test_samples",
            "n_classes", "feature_dim",
        )
        for name in positive_ints:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if isinstance(self.init_battery, bool) or not isinstance(self.init_battery, (int, np.integer)):
            raise ConfigError(f"init_battery must be an integer, got {self.init_battery!r}")
        if self.init_battery < 0:
            raise ConfigError(f"init_battery must be non-negative, got {self.init_battery}")
        if not 0.0 <= float(self.charge_prob) <= 1.0:
            raise ConfigError(f"charge_prob must lie in [0, 1], got {self.charge_prob}")
        if not float(self.learning_rate) > 0.0 or not np.isfinite(self.learning_rate):
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.n_groups > self.slots_per_epoch:
            raise ConfigError(
                f"n_groups ({self.n_groups}) must not exceed slots_per_epoch ({self.slots_per_epoch})"
            )
        if self.n_groups > self.n_clients:
            raise ConfigError(f"n_groups ({self.n_groups}) must not exceed n_clients ({self.n_clients})")
        if self.train_cost > self.battery_cap:
            raise ConfigError(
                f"train_cost ({self.train_cost}) exceeds battery_cap ({self.battery_cap}); no client could ever train"
            )
        if self.init_battery > self.battery_cap:
            raise ConfigError(f"init_battery ({self.init_battery}) exceeds battery_cap ({self.battery_cap})")
        if self.partition not in ("iid", "dirichlet"):
            raise ConfigError(f"partition must be 'iid' or 'dirichlet', got {self.partition!r}")
        if self.partition == "dirichlet":
            if self.dirichlet_alpha is None or not float(self.dirichlet_alpha) > 0.0:
                raise ConfigError(f"dirichlet partition needs dirichlet_alpha > 0, got {self.dirichlet_alpha!r}")
        if self.aggregation not in ("sum", "mean"):
            raise ConfigError(f"aggregation must be 'sum' or 'mean', got {self.aggregation!r}")
        if self.batch_size is not None and (isinstance(self.batch_size, bool) or self.batch_size < 1):
            raise ConfigError(f"batch_size must be a positive integer or null, got {self.batch_size!r}")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be at least 2")
        if not float(self.cluster_spread) >= 0.0:
            raise ConfigError(f"cluster_spread must be non-negative, got {self.cluster_spread}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed <= MAX_SEED:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")

    @property
    def group_round(self) -> int:
        """Slots per group window, ``floor(S / G)``."""
        return self.slots_per_epoch // self.n_groups

    @property
    def total_slots(self) -> int:
        return self.slots_per_epoch * self.n_epochs

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["scheme"] = self.scheme.value
        return out


@dataclass(frozen=True)
class TimeIndex:
    slot: int
    epoch: int
    group_in_turn: int
    # True for the trailing S - G*R slots that belong to no group window.
    in_slack: bool = False


def derive_time(slot: int, config: SimConfig) -> TimeIndex:
    if not 0 <= slot < config.total_slots:
        raise ValueError(f"slot {slot} outside [0, {config.total_slots})")
    s = config.slots_per_epoch
    r = config.group_round
    offset = slot % s
    group = offset // r
    in_slack = group >= config.n_groups
    return TimeIndex(slot=slot, epoch=slot // s, group_in_turn=min(group, config.n_groups - 1), in_slack=in_slack)


@dataclass
class Update:
    delta: ModelParams
    produced_epoch: int
    client_id: int


@dataclass
class ClientState:
    id: int
    battery: int
    group: int
    model: ModelParams
    shard: np.ndarray
    busy_until: int | None = None
    pending_update: Update | None = None
    job: TrainingJob | None = None

    def is_busy(self, slot: int) -> bool:
        return self.busy_until is not None and slot < self.busy_until


@dataclass
class GroupAssignment:
    """Fixed client-to-group membership plus the hub elected for each epoch."""

    membership: np.ndarray
    n_groups: int
    hubs: list[tuple[int, ...]] = field(default_factory=list)

    def members(self, group: int) -> np.ndarray:
        return np.flatnonzero(self.membership == group)

    def sizes(self) -> list[int]:
        return np.bincount(self.membership, minlength=self.n_groups).tolist()

    def hub(self, epoch: int, group: int) -> int:
        return self.hubs[epoch][group]
