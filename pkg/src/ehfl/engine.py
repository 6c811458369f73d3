"""Single-threaded slot loop.

Each slot runs, in order: policy decisions against the slot-start state, action
application (energy deductions, uploads, training starts), completion of
training jobs, Bernoulli charging, group-window close, and, on the epoch's last
slot, the server update, broadcast and evaluation.

Randomness comes from independent streams spawned off one root seed (data,
partition, grouping, hub election, per-client charging, per-client batch
order), so changing one knob does not shift the draws of another.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from ehfl import energy, scheduling
from ehfl.energy import EnergyLedger
from ehfl.learning import (
    DataPartition,
    Dataset,
    SoftmaxTask,
    Task,
    TrainingJob,
    aggregate,
    evaluate,
    load_csv_dataset,
    local_train,
    make_synthetic_task,
    partition_dirichlet,
    partition_iid,
)
from ehfl.types import (
    Action,
    ClientState,
    GroupAssignment,
    InvariantViolation,
    ModelParams,
    Scheme,
    SimConfig,
    Update,
    derive_time,
)

log = logging.getLogger(__name__)

# Per-slot action codes stored in the optional trace.
IDLE, TRANSMIT, START, BUSY = 0, 1, 2, 3
_CODES = {Action.IDLE: IDLE, Action.TRANSMIT: TRANSMIT, Action.START_TRAINING: START}


@dataclass
class EpochRecord:
    epoch: int
    accuracy: float
    loss: float
    energy_train: int
    energy_tx: int
    harvested: int
    wasted: int
    participants: int
    trainings: int
    free_handoffs: int

    @property
    def energy_total(self) -> int:
        return self.energy_train + self.energy_tx


@dataclass
class MetricsLog:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]


@dataclass
class Streams:
    data: np.random.Generator
    partition: np.random.Generator
    grouping: np.random.Generator
    hubs: np.random.Generator
    charging: list[np.random.Generator]
    batching: list[np.random.Generator]

    @classmethod
    def from_seed(cls, seed: int, n_clients: int) -> Streams:
        root = np.random.SeedSequence(seed)
        data, part, group, hubs, charge, batch = root.spawn(6)
        gen = np.random.default_rng
        return cls(
            data=gen(data),
            partition=gen(part),
            grouping=gen(group),
            hubs=gen(hubs),
            charging=[gen(s) for s in charge.spawn(n_clients)],
            batching=[gen(s) for s in batch.spawn(n_clients)],
        )


@dataclass
class SimState:
    config: SimConfig
    task: Task
    train: Dataset
    test: Dataset
    partition: DataPartition
    shards: list[Dataset]
    clients: list[ClientState]
    assignment: GroupAssignment
    server_model: ModelParams
    staged_model: ModelParams
    streams: Streams
    ledger: EnergyLedger = field(default_factory=EnergyLedger)
    metrics: MetricsLog = field(default_factory=MetricsLog)
    slot: int = 0
    inbox: list[Update] = field(default_factory=list)
    # Model the last group's hub handed to the server, applied at the epoch boundary.
    server_upload: ModelParams | None = None
    participants: int = 0
    trainings: int = 0
    free_handoffs: int = 0
    trace: list[np.ndarray] | None = None

    @property
    def batteries(self) -> np.ndarray:
        return np.array([c.battery for c in self.clients], dtype=np.int64)

    @property
    def done(self) -> bool:
        return self.slot >= self.config.total_slots


@dataclass
class SimResult:
    log: MetricsLog
    final_model: ModelParams
    state: SimState


def _load_data(config: SimConfig, rng: np.random.Generator) -> tuple[Task, Dataset, Dataset]:
    n_train = config.n_clients * config.samples_per_client
    if config.data_path is None:
        return make_synthetic_task(
            config.n_classes, config.feature_dim, config.cluster_spread, rng, n_train=n_train, n_test=config.test_samples
        )
    data = load_csv_dataset(config.data_path)
    if len(data) <= config.test_samples:
        raise ValueError(f"{config.data_path}: {len(data)} rows leave nothing after a {config.test_samples}-row test split")
    perm = rng.permutation(len(data))
    test, train = data.subset(perm[: config.test_samples]), data.subset(perm[config.test_samples :])
    task = SoftmaxTask(int(data.y.max()) + 1, data.X.shape[1])
    return task, train, test


def init_state(config: SimConfig, record_trace: bool = False) -> SimState:
    streams = Streams.from_seed(config.seed, config.n_clients)
    task, train, test = _load_data(config, streams.data)
    if config.partition == "iid":
        partition = partition_iid(train, config.n_clients, config.samples_per_client, streams.partition)
    else:
        partition = partition_dirichlet(train, config.n_clients, float(config.dirichlet_alpha), streams.partition)
    partition.test = test
    assignment = scheduling.assign_groups(config.n_clients, config.n_groups, streams.grouping)
    scheduling.elect_hubs(assignment, 0, streams.hubs)
    zeros = np.zeros(task.dimension)
    clients = [
        ClientState(
            id=i,
            battery=config.init_battery,
            group=int(assignment.membership[i]),
            model=zeros.copy(),
            shard=partition.shards[i],
        )
        for i in range(config.n_clients)
    ]
    return SimState(
        config=config,
        task=task,
        train=train,
        test=test,
        partition=partition,
        shards=[train.subset(s) for s in partition.shards],
        clients=clients,
        assignment=assignment,
        server_model=zeros.copy(),
        staged_model=zeros.copy(),
        streams=streams,
        trace=[] if record_trace else None,
    )


def _finish_job(state: SimState, client: ClientState) -> None:
    cfg = state.config
    job = client.job
    update = local_train(
        job.start_model,
        state.shards[client.id],
        cfg.learning_rate,
        cfg.n_batches,
        state.task,
        rng=state.streams.batching[client.id],
        batch_size=cfg.batch_size,
        epoch=job.epoch,
        client_id=client.id,
    )
    job.iterate = job.start_model - update.delta
    job.batches_done = cfg.n_batches
    client.pending_update = update
    client.job = None
    client.busy_until = None


def _check_invariants(state: SimState) -> None:
    cfg = state.config
    batteries = state.batteries
    if batteries.min() < 0 or batteries.max() > cfg.battery_cap:
        bad = [c.id for c in state.clients if not 0 <= c.battery <= cfg.battery_cap]
        raise InvariantViolation(f"slot {state.slot}: battery out of [0, {cfg.battery_cap}] for clients {bad}")
    expected = state.ledger.expected_stored(cfg.n_clients, cfg.init_battery)
    if int(batteries.sum()) != expected:
        raise InvariantViolation(
            f"slot {state.slot}: batteries sum to {int(batteries.sum())}, ledger implies {expected} ({state.ledger})"
        )


def close_group_window(state: SimState, group: int) -> None:
    """Aggregate the hub's inbox and hand the result to the next group, or to the server."""
    cfg = state.config
    time = derive_time(state.slot, cfg)
    hub = state.clients[state.assignment.hub(time.epoch, group)]
    merged = aggregate(hub.model, state.inbox, cfg.aggregation)
    state.participants += len(state.inbox)
    state.inbox = []
    state.staged_model = merged
    hub.model = merged.copy()
    if group < cfg.n_groups - 1:
        for j in state.assignment.members(group + 1):
            state.clients[j].model = merged.copy()
    else:
        state.server_upload = merged.copy()


def _close_epoch(state: SimState) -> None:
    cfg = state.config
    epoch = state.slot // cfg.slots_per_epoch
    if cfg.scheme is Scheme.FEDAVG:
        state.server_model = aggregate(state.server_model, state.inbox, cfg.aggregation)
        state.participants += len(state.inbox)
        state.inbox = []
        receivers = range(cfg.n_clients)
    else:
        if state.server_upload is not None:
            state.server_model = state.server_upload
            state.server_upload = None
        receivers = state.assignment.members(0)
    for j in receivers:
        state.clients[j].model = state.server_model.copy()
    accuracy, loss = evaluate(state.server_model, state.test, state.task)
    led = state.ledger
    state.metrics.records.append(
        EpochRecord(
            epoch=epoch,
            accuracy=accuracy,
            loss=loss,
            energy_train=led.consumed_train,
            energy_tx=led.consumed_tx,
            harvested=led.harvested,
            wasted=led.wasted,
            participants=state.participants,
            trainings=state.trainings,
            free_handoffs=state.free_handoffs,
        )
    )
    state.participants = 0
    state.trainings = 0
    if epoch + 1 < cfg.n_epochs:
        scheduling.elect_hubs(state.assignment, epoch + 1, state.streams.hubs)


def step_slot(state: SimState) -> SimState:
    """Advance the simulation by one slot, mutating and returning ``state``."""
    cfg = state.config
    if state.done:
        raise ValueError(f"simulation already finished at slot {state.slot}")
    time = derive_time(state.slot, cfg)
    policy = scheduling.policy_for(cfg.scheme)
    grouped = cfg.scheme is not Scheme.FEDAVG

    decisions: dict[int, Action] = {}
    for c in state.clients:
        if not c.is_busy(time.slot):
            decisions[c.id] = policy(c, time, cfg)

    # The hub's hand-off is its transmission for the slot and pre-empts training.
    hub_id = None
    window_group = None
    if grouped and scheduling.is_aggregation_slot(time, time.group_in_turn, cfg):
        window_group = time.group_in_turn
        hub_id = state.assignment.hub(time.epoch, window_group)
        hub = state.clients[hub_id]
        if hub_id in decisions and hub.battery >= 1:
            decisions[hub_id] = Action.TRANSMIT
        else:
            state.free_handoffs += 1
            log.debug("slot %d: hub %d of group %d hands off without paying", time.slot, hub_id, window_group)

    codes = None
    if state.trace is not None:
        codes = np.full(cfg.n_clients, BUSY, dtype=np.int8)
    for cid, action in decisions.items():
        c = state.clients[cid]
        if codes is not None:
            codes[cid] = _CODES[action]
        if action is Action.TRANSMIT:
            c.battery = energy.apply_transmit(c.battery)
            state.ledger.consumed_tx += 1
            if c.pending_update is not None:
                state.inbox.append(c.pending_update)
                c.pending_update = None
        elif action is Action.START_TRAINING:
            c.battery = energy.start_training(c.battery, cfg.train_cost)
            state.ledger.consumed_train += cfg.train_cost
            c.busy_until = time.slot + cfg.train_cost
            c.job = TrainingJob(
                start_slot=time.slot,
                end_slot=c.busy_until,
                client_id=cid,
                epoch=time.epoch,
                start_model=c.model.copy(),
            )
            state.trainings += 1
        else:
            c.battery = energy.apply_idle(c.battery)
    if codes is not None:
        state.trace.append(codes)

    for c in state.clients:
        if c.job is not None and c.job.end_slot == time.slot + 1:
            _finish_job(state, c)

    for c in state.clients:
        charged = energy.sample_charge(state.streams.charging[c.id], cfg.charge_prob)
        c.battery = energy.apply_charge(c.battery, cfg.battery_cap, charged, state.ledger)

    if window_group is not None:
        close_group_window(state, window_group)
    if scheduling.is_epoch_end(time, cfg):
        _close_epoch(state)

    _check_invariants(state)
    state.slot += 1
    return state


def state_digest(state: SimState) -> str:
    """Hash of everything that evolves during a run, for replay comparisons."""
    h = hashlib.sha256()
    h.update(np.int64(state.slot).tobytes())
    h.update(state.batteries.tobytes())
    h.update(state.server_model.tobytes())
    led = state.ledger
    h.update(np.array([led.consumed_tx, led.consumed_train, led.harvested, led.wasted], dtype=np.int64).tobytes())
    for c in state.clients:
        h.update(c.model.tobytes())
        h.update(np.int64(-1 if c.busy_until is None else c.busy_until).tobytes())
        if c.pending_update is not None:
            h.update(c.pending_update.delta.tobytes())
    return h.hexdigest()


def run_simulation(config: SimConfig, record_trace: bool = False) -> SimResult:
    state = init_state(config, record_trace=record_trace)
    while not state.done:
        step_slot(state)
    return SimResult(log=state.metrics, final_model=state.server_model.copy(), state=state)
