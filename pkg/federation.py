# federation.py
"""Core federation engine: FedMap, the dense FedAvg baseline and FederatedPruning."""

import concurrent.futures
import logging
from dataclasses import dataclass, replace
from time import perf_counter
from typing import Callable, Optional, Sequence

import numpy as np

from aggregation import ClientUpdate, fedavg_aggregate, masked_aggregate, sample_weights
from codec import (
    ByteLedger,
    ParamDelta,
    PayloadFrame,
    account,
    decode_payload,
    encode_payload,
    mask_bytes,
    payload_bytes,
    rfm,
    rwz,
)
from data import SplitDataset, partition, synth_blobs
from feddr import (
    FedDRClientState,
    ProximalPull,
    apply_hybrid_config,
    feddr_delta,
    reflect,
    update_intermediate,
)
from models import (
    Direction,
    ExperimentConfig,
    FedDRSettings,
    HybridConfig,
    MaskEvent,
    Method,
    RoundMetrics,
)
from nn import Dataset, Model, StructuralError, TrainHyper, evaluate, init_mlp, train_local
from pruning import PruneMask, decode_mask, encode_mask, is_subset, prune, reactivated_count
from schedule import remaining_params
from seed_utils import derive_rng

BROADCAST_ID = 0xFFFFFFFF


def _read_frame(blob: bytes, bits: int, round_index: int, client_id: int) -> PayloadFrame:
    frame = decode_payload(blob, bits)
    if frame.round != round_index or frame.client_id != client_id:
        raise StructuralError(
            f"unexpected frame (round {frame.round}, client {frame.client_id}); "
            f"expected round {round_index}, client {client_id}"
        )
    return frame


def _bias_layout(model: Model) -> list[Optional[int]]:
    return [None if b is None else int(b.size) for b in model.biases]


def _apply_delta_frame(model: Model, mask: PruneMask, blob: bytes, bits: int, round_index: int) -> Model:
    """θ_t = θ_{t−1} − RFM(Δ̄, M); shared by the server and every client."""
    frame = _read_frame(blob, bits, round_index, BROADCAST_ID)
    return rfm(frame.payload, mask, _bias_layout(model)).subtract_from(model)


def _load_model_frame(template: Model, mask: PruneMask, blob: bytes, bits: int, round_index: int) -> Model:
    """Scatter broadcast model values onto the mask (FederatedPruning downlink)."""
    frame = _read_frame(blob, bits, round_index, BROADCAST_ID)
    values = rfm(frame.payload, mask, _bias_layout(template))
    return template.with_weights(values.weights, values.biases)


@dataclass
class ClientRoundResult:
    """What one client hands back after local training"""
    client_id: int
    frame: bytes
    local_accuracy: float
    mask_digest: str
    num_samples: int


class ClientNode:
    """
    One simulated client. Holds its own data, its own reconstruction of the global
    model and its own copy of the shared mask; nothing is shared with the server
    except the encoded frames.
    """

    def __init__(
        self,
        client_id: int,
        train: Dataset,
        test: Dataset,
        init_model: Model,
        hyper: TrainHyper,
        epochs: int,
        seed: int,
        bits_per_param: int,
        feddr: Optional[FedDRClientState] = None,
        feddr_settings: Optional[FedDRSettings] = None,
    ):
        self.client_id = client_id
        self.train = train
        self.test = test
        self.global_model = init_model.copy()
        self.mask = PruneMask.ones(init_model)
        self.hyper = hyper
        self.epochs = epochs
        self.seed = seed
        self.bits = bits_per_param
        self.feddr = feddr
        self.feddr_settings = feddr_settings
        self.logger = logging.getLogger("ClientNode")

    @property
    def num_samples(self) -> int:
        return len(self.train)

    def apply_broadcast(self, blob: bytes, round_index: int) -> None:
        self.global_model = _apply_delta_frame(self.global_model, self.mask, blob, self.bits, round_index)

    def load_model_broadcast(self, blob: bytes, mask_blob: bytes, round_index: int) -> None:
        self.mask = decode_mask(mask_blob, self.global_model.shapes)
        self.global_model = _load_model_frame(self.global_model, self.mask, blob, self.bits, round_index)

    def prune_to(self, k: int) -> PruneMask:
        self.global_model, self.mask = prune(self.global_model, k, within=self.mask)
        return self.mask

    def train_round(self, round_index: int, prune_events_so_far: int = 0) -> ClientRoundResult:
        rng = derive_rng(self.seed, "shuffle", self.client_id, round_index)
        start = self.global_model

        if self.feddr is not None:
            apply_hybrid_config(
                self.feddr_settings.config if self.feddr_settings else HybridConfig.FEDMAP_FEDDR,
                prune_events_so_far,
                self.feddr,
                self.feddr_settings,
            )

        if self.feddr is not None and self.feddr.enabled:
            theta_y = update_intermediate(self.feddr, start, self.mask)
            local = train_local(
                theta_y, self.mask, self.train, self.epochs, self.hyper, rng,
                prox=ProximalPull(theta_y, self.feddr.eta),
            )
            self.feddr.theta_local_prev = local
            theta_x = reflect(local, theta_y)
            # server subtracts, so send M·θx_prev − θx_new
            delta = feddr_delta(self.feddr, theta_x, self.mask).negated()
        else:
            local = train_local(start, self.mask, self.train, self.epochs, self.hyper, rng)
            delta = ParamDelta.between(start, local)

        frame = encode_payload(rwz(delta, self.mask), round_index, self.client_id, self.bits)
        accuracy, _ = evaluate(local, self.test)
        self.logger.debug(
            f"client {self.client_id} round {round_index}: K={self.mask.nonzero} "
            f"local_acc={accuracy:.4f} frame={len(frame)}B"
        )
        return ClientRoundResult(
            client_id=self.client_id,
            frame=frame,
            local_accuracy=accuracy,
            mask_digest=self.mask.digest(),
            num_samples=self.num_samples,
        )


class ParameterServer:
    """Averages client deltas (FedMap / dense FedAvg). Never sends a mask."""

    def __init__(self, init_model: Model, bits_per_param: int):
        self.global_model = init_model.copy()
        self.mask = PruneMask.ones(init_model)
        self.bits = bits_per_param

    def prune_to(self, k: int) -> PruneMask:
        self.global_model, self.mask = prune(self.global_model, k, within=self.mask)
        return self.mask

    def collect(self, results: Sequence[ClientRoundResult], round_index: int) -> list[ClientUpdate]:
        digest = self.mask.digest()
        updates = []
        for result in results:
            if result.mask_digest != digest:
                raise StructuralError(
                    f"client {result.client_id} mask diverged from the server at round {round_index}"
                )
            frame = _read_frame(result.frame, self.bits, round_index, result.client_id)
            updates.append(ClientUpdate(frame.client_id, frame.payload, digest, result.num_samples))
        return updates

    def aggregate(
        self,
        results: Sequence[ClientRoundResult],
        round_index: int,
        weights: Optional[Sequence[float]] = None,
    ) -> bytes:
        """Average, encode the broadcast, and apply it exactly as clients will."""
        averaged = fedavg_aggregate(self.collect(results, round_index), weights)
        blob = encode_payload(averaged, round_index, BROADCAST_ID, self.bits)
        self.global_model = _apply_delta_frame(self.global_model, self.mask, blob, self.bits, round_index)
        return blob


class FederatedPruningServer:
    """
    Server of the FederatedPruning baseline.

    Keeps a dense shadow model: pruned positions keep their last values, so a
    re-rank over all positions can bring them back. Sends the mask every round.
    """

    def __init__(self, init_model: Model, bits_per_param: int):
        self.shadow = init_model.copy()
        self.mask = PruneMask.ones(init_model)
        self.bits = bits_per_param
        self.client_view = init_model.copy()

    @property
    def global_model(self) -> Model:
        weights = [np.where(bits, w, 0.0) for w, bits in zip(self.shadow.weights, self.mask.bits)]
        return self.shadow.with_weights(weights)

    def rerank(self, k: int) -> tuple[PruneMask, int]:
        """Top-K LAMP over every position of the shadow; returns (mask, reactivated)."""
        previous = self.mask
        _, self.mask = prune(self.shadow, k)
        return self.mask, reactivated_count(self.mask, previous)

    def broadcast(self, round_index: int) -> tuple[bytes, bytes]:
        payload = rwz(ParamDelta(self.shadow.weights, self.shadow.biases), self.mask)
        blob = encode_payload(payload, round_index, BROADCAST_ID, self.bits)
        self.client_view = _load_model_frame(self.shadow, self.mask, blob, self.bits, round_index)
        return blob, encode_mask(self.mask)

    def aggregate(self, results: Sequence[ClientRoundResult], round_index: int) -> None:
        layout = _bias_layout(self.shadow)
        deltas = []
        for result in results:
            frame = _read_frame(result.frame, self.bits, round_index, result.client_id)
            deltas.append(rfm(frame.payload, self.mask, layout))
        averaged = masked_aggregate(deltas, [self.mask] * len(deltas))
        self.apply_update(averaged)

    def apply_update(self, averaged: ParamDelta) -> None:
        """Subtract the averaged delta on the mask; frozen positions stay untouched."""
        weights = [
            np.where(bits, w - dw, w)
            for w, dw, bits in zip(self.shadow.weights, averaged.weights, self.mask.bits)
        ]
        biases = [
            None if b is None or db is None else b - db
            for b, db in zip(self.shadow.biases, averaged.biases)
        ]
        self.shadow = self.shadow.with_weights(weights, biases)


class FederationEngine:
    """
    Runs one experiment end to end and produces per-round metrics.
    Clients may train in worker threads; aggregation always runs in client_id order.
    """

    def __init__(self, cfg: ExperimentConfig, data: Optional[SplitDataset] = None, threads: int = 1):
        if cfg.feddr.enabled and cfg.method == Method.FEDERATED_PRUNING:
            raise ValueError("FedDR cannot be combined with the federated_pruning baseline")
        self.cfg = cfg
        self.logger = logging.getLogger("FederationEngine")
        self.threads = max(1, int(threads))
        self.data = data or synth_blobs(
            cfg.data.classes, cfg.data.dim, cfg.data.samples, cfg.data.spread, cfg.seed
        )
        spec = replace(cfg.partition, num_clients=cfg.clients, seed=cfg.seed)
        self.parts = partition(self.data.train, spec)
        self.hyper = TrainHyper(lr=cfg.lr, weight_decay=cfg.weight_decay, batch_size=cfg.batch_size)

        probe = self._initial_model()
        self.d = probe.num_weights
        self.num_biases = probe.num_biases
        self.schedule = cfg.schedule.resolved(self.d, cfg.rounds)

        self.metrics: list[RoundMetrics] = []
        self.mask_events: list[MaskEvent] = []
        self.final_model: Optional[Model] = None
        self.final_mask: Optional[PruneMask] = None
        self._executor: Optional[concurrent.futures.ThreadPoolExecutor] = None

        # Callback for progress reporting
        self.on_status_update: Optional[Callable[[str], None]] = None

    def _initial_model(self) -> Model:
        """Every party derives the same initial model from the experiment seed."""
        return init_mlp(
            self.cfg.layer_sizes, derive_rng(self.cfg.seed, "init"), bias=self.cfg.model.bias
        )

    def _update_status(self, message: str) -> None:
        if self.on_status_update:
            self.on_status_update(message)

    def _make_clients(self, with_feddr: bool) -> list[ClientNode]:
        clients = []
        for client_id, part in enumerate(self.parts):
            init_model = self._initial_model()
            state = None
            if with_feddr:
                state = FedDRClientState.initial(init_model, self.cfg.feddr.alpha, self.cfg.feddr.eta)
            clients.append(
                ClientNode(
                    client_id=client_id,
                    train=part,
                    test=self.data.test,
                    init_model=init_model,
                    hyper=self.hyper,
                    epochs=self.cfg.local_epochs,
                    seed=self.cfg.seed,
                    bits_per_param=self.cfg.bits_per_param,
                    feddr=state,
                    feddr_settings=self.cfg.feddr if with_feddr else None,
                )
            )
        return clients

    def _train_clients(
        self, clients: Sequence[ClientNode], round_index: int, events: int
    ) -> list[ClientRoundResult]:
        if self._executor is None:
            return [c.train_round(round_index, events) for c in clients]
        futures = [self._executor.submit(c.train_round, round_index, events) for c in clients]
        return [f.result() for f in futures]

    def _check_consistency(self, reference: Model, clients: Sequence[ClientNode], round_index: int) -> None:
        for client in clients:
            if not client.global_model.equals(reference):
                raise StructuralError(
                    f"client {client.client_id} reconstruction differs from the server "
                    f"at round {round_index}"
                )

    def _dense_schedule(self, dense: bool) -> bool:
        return dense or (self.cfg.feddr.enabled and self.cfg.feddr.config == HybridConfig.FEDDR)

    def _k_at(self, round_index: int, dense: bool) -> int:
        if self._dense_schedule(dense):
            return self.d
        return remaining_params(self.schedule, round_index)

    def _sample_weighted(self, events: int) -> bool:
        fd = self.cfg.feddr
        return fd.enabled and fd.config == HybridConfig.C3 and events >= fd.switch_event

    def _record_mask_event(
        self, round_index: int, mask: PruneMask, previous: PruneMask, reactivated: int = 0
    ) -> MaskEvent:
        event = MaskEvent(
            round=round_index,
            remaining_params=mask.nonzero,
            digest=mask.digest(),
            nested=is_subset(mask, previous),
            reactivated=reactivated,
        )
        self.mask_events.append(event)
        self.logger.info(
            f"Prune event at round {round_index}: K={mask.nonzero}/{self.d} "
            f"nested={event.nested} sha256={event.digest[:12]}"
        )
        if reactivated:
            self.logger.warning(
                f"Round {round_index}: {reactivated} previously pruned positions reactivated"
            )
        return event

    def _round_metrics(
        self,
        round_index: int,
        k: int,
        server_model: Model,
        results: Sequence[ClientRoundResult],
        ledger: ByteLedger,
        prune_event: bool,
        with_mask: bool,
    ) -> RoundMetrics:
        accuracy, _ = evaluate(server_model, self.data.test)
        uplink = payload_bytes(k, self.cfg.bits_per_param, self.num_biases)
        downlink = uplink + (mask_bytes(self.d) if with_mask else 0)
        metrics = RoundMetrics(
            round=round_index,
            global_test_accuracy=accuracy,
            mean_client_accuracy=float(np.mean([r.local_accuracy for r in results])),
            remaining_params=k,
            remaining_fraction=k / self.d,
            uplink_bytes_per_client=uplink,
            downlink_bytes=downlink,
            cumulative_bytes=ledger.cumulative,
            prune_event=prune_event,
        )
        self.metrics.append(metrics)
        self.logger.info(
            f"Round {round_index}/{self.cfg.rounds}: K={k} ({metrics.remaining_fraction:.1%}) "
            f"acc={accuracy:.4f} client_acc={metrics.mean_client_accuracy:.4f} "
            f"up={uplink}B down={downlink}B total={ledger.cumulative}B"
        )
        return metrics

    def _account_round(self, ledger: ByteLedger, k: int, clients: int, with_mask: bool) -> ByteLedger:
        for _ in range(clients):
            ledger = account(ledger, k, Direction.UP, False, self.d, self.num_biases)
            ledger = account(ledger, k, Direction.DOWN, with_mask, self.d, self.num_biases)
        return ledger

    def _start_pool(self) -> None:
        if self.threads > 1 and self._executor is None:
            self._executor = concurrent.futures.ThreadPoolExecutor(max_workers=self.threads)

    def _stop_pool(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def run(self) -> list[RoundMetrics]:
        """Run the configured method."""
        if self.cfg.method == Method.FEDERATED_PRUNING:
            return self.run_federated_pruning()
        if self.cfg.method == Method.FEDAVG_DENSE:
            return self.run_fedavg_dense()
        return self.run_fedmap()

    def run_fedmap(self) -> list[RoundMetrics]:
        return self._run_delta_federation(dense=False)

    def run_fedavg_dense(self) -> list[RoundMetrics]:
        return self._run_delta_federation(dense=True)

    def _run_delta_federation(self, dense: bool) -> list[RoundMetrics]:
        cfg = self.cfg
        label = "fedavg_dense" if dense else "fedmap"
        started = perf_counter()
        self.metrics, self.mask_events = [], []
        self.logger.info(
            f"Starting {label}: N={cfg.clients} T={cfg.rounds} L={cfg.local_epochs} d={self.d} "
            f"feddr={cfg.feddr.config.value if cfg.feddr.enabled else 'off'}"
        )
        self._update_status(f"{label}: running {cfg.rounds} rounds")

        server = ParameterServer(self._initial_model(), cfg.bits_per_param)
        clients = self._make_clients(with_feddr=cfg.feddr.enabled)
        ledger = ByteLedger(cfg.bits_per_param)
        previous_k = self.d
        event_mask = server.mask
        events = 0
        pending: Optional[bytes] = None

        self._start_pool()
        try:
            for t in range(1, cfg.rounds + 1):
                ledger = ledger.next_round()
                if pending is not None:
                    for client in clients:
                        client.apply_broadcast(pending, t - 1)
                    self._check_consistency(server.global_model, clients, t)

                k = self._k_at(t, dense)
                mask = server.prune_to(k)
                for client in clients:
                    client.prune_to(k)
                is_event = k < previous_k
                if is_event:
                    events += 1
                    self._record_mask_event(t, mask, event_mask)
                    event_mask = mask

                results = self._train_clients(clients, t, events)
                weights = (
                    sample_weights([r.num_samples for r in results])
                    if self._sample_weighted(events)
                    else None
                )
                pending = server.aggregate(results, t, weights)
                ledger = self._account_round(ledger, k, len(clients), with_mask=False)
                self._round_metrics(t, k, server.global_model, results, ledger, is_event, False)
                previous_k = k

            if pending is not None:
                for client in clients:
                    client.apply_broadcast(pending, cfg.rounds)
                self._check_consistency(server.global_model, clients, cfg.rounds)
        finally:
            self._stop_pool()

        self.final_model = server.global_model
        self.final_mask = server.mask
        elapsed_ms = (perf_counter() - started) * 1000
        self.logger.info(f"[perf] {label} finished rounds={cfg.rounds} elapsed_ms={elapsed_ms:.1f}")
        self._update_status(f"{label}: done")
        return self.metrics

    def run_federated_pruning(self) -> list[RoundMetrics]:
        cfg = self.cfg
        started = perf_counter()
        self.metrics, self.mask_events = [], []
        self.logger.info(
            f"Starting federated_pruning: N={cfg.clients} T={cfg.rounds} L={cfg.local_epochs} d={self.d}"
        )
        self._update_status(f"federated_pruning: running {cfg.rounds} rounds")

        server = FederatedPruningServer(self._initial_model(), cfg.bits_per_param)
        clients = self._make_clients(with_feddr=False)
        ledger = ByteLedger(cfg.bits_per_param)
        event_mask = server.mask
        previous_k = self.d

        self._start_pool()
        try:
            for t in range(1, cfg.rounds + 1):
                ledger = ledger.next_round()
                k = remaining_params(self.schedule, t)
                is_event = k < previous_k
                # re-rank every interval, and whenever K moves between intervals;
                # floor re-ranks reach masks.log but are not prune events
                rerank = k != server.mask.nonzero or t % self.schedule.s == 0
                if rerank:
                    mask, reactivated = server.rerank(k)
                    self._record_mask_event(t, mask, event_mask, reactivated)
                    event_mask = mask

                blob, mask_blob = server.broadcast(t)
                for client in clients:
                    client.load_model_broadcast(blob, mask_blob, t)
                self._check_consistency(server.client_view, clients, t)

                results = self._train_clients(clients, t, 0)
                server.aggregate(results, t)
                ledger = self._account_round(ledger, k, len(clients), with_mask=True)
                self._round_metrics(t, k, server.global_model, results, ledger, is_event, True)
                previous_k = k
        finally:
            self._stop_pool()

        self.final_model = server.global_model
        self.final_mask = server.mask
        elapsed_ms = (perf_counter() - started) * 1000
        self.logger.info(f"[perf] federated_pruning finished rounds={cfg.rounds} elapsed_ms={elapsed_ms:.1f}")
        self._update_status("federated_pruning: done")
        return self.metrics


def run_fedmap(cfg: ExperimentConfig, data: Optional[SplitDataset] = None, threads: int = 1) -> list[RoundMetrics]:
    return FederationEngine(cfg, data, threads).run_fedmap()


def run_fedavg_dense(
    cfg: ExperimentConfig, data: Optional[SplitDataset] = None, threads: int = 1
) -> list[RoundMetrics]:
    return FederationEngine(cfg, data, threads).run_fedavg_dense()


def run_federated_pruning(
    cfg: ExperimentConfig, data: Optional[SplitDataset] = None, threads: int = 1
) -> list[RoundMetrics]:
    return FederationEngine(cfg, data, threads).run_federated_pruning()
