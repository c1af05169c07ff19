"""Federation hub: round lifecycle, weighted aggregation, consensus gating.

The hub is a single logical state machine. Every mutating call takes one
internal lock, so concurrent client submissions are applied in a linearizable
order; read-only queries observe only fully applied states. An append-only
audit list records every event (round lifecycle, accepts, rollbacks, rejected
submissions) and can be flushed as JSON lines.

Aggregation follows sample-count-weighted federated averaging. Deltas are
summed in ascending client_id order with Kahan compensation, which makes the
candidate parameters bit-deterministic regardless of arrival order.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

import numpy as np

from .transport import ParamPayload, encode_payload

__all__ = [
    "AcceptancePolicy",
    "ClientUpdate",
    "ConsensusDecision",
    "FederationHub",
    "GlobalModel",
    "HubError",
    "InsufficientParticipationError",
    "RoundState",
    "RoundStatus",
    "SubmitResult",
    "SubmitStatus",
    "federated_average",
]


class HubError(RuntimeError):
    """Illegal hub state transition or malformed request."""


class InsufficientParticipationError(HubError):
    """Fewer updates than min_clients when aggregation was requested."""


@dataclass(frozen=True)
class GlobalModel:
    version: int
    params: np.ndarray
    validation_accuracy: float | None
    created_round: int

    def __post_init__(self) -> None:
        params = np.asarray(self.params, dtype=np.float64)
        object.__setattr__(self, "params", params)
        if not np.isfinite(params).all():
            raise HubError("global model parameters must be finite")
        if self.version < 0:
            raise HubError("version must be non-negative")


@dataclass(frozen=True)
class ClientUpdate:
    client_id: str
    base_version: int
    delta: np.ndarray
    sample_count: int
    round_id: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=np.float64))


@dataclass(frozen=True)
class AcceptancePolicy:
    epsilon_tol: float = 0.02
    validation_set_ref: str = "default"

    def __post_init__(self) -> None:
        if self.epsilon_tol < 0:
            raise HubError("epsilon_tol must be non-negative")


class RoundStatus(Enum):
    OPEN = "open"
    AGGREGATING = "aggregating"
    CLOSED = "closed"


@dataclass
class RoundState:
    round_id: int
    base_version: int
    min_clients: int
    deadline_ticks: int
    opened_tick: int
    status: RoundStatus = RoundStatus.OPEN
    received: dict[str, ClientUpdate] = field(default_factory=dict)


class SubmitStatus(Enum):
    ACCEPTED = "accepted"
    REJECTED_STALE = "rejected_stale"
    REJECTED_DUPLICATE = "rejected_duplicate"
    REJECTED_MALFORMED = "rejected_malformed"


@dataclass(frozen=True)
class SubmitResult:
    status: SubmitStatus
    reason: str | None = None


@dataclass(frozen=True)
class ConsensusDecision:
    accepted: bool
    model: GlobalModel
    candidate_accuracy: float | None
    previous_accuracy: float | None
    reason: str


def federated_average(base_params: np.ndarray, updates: Iterable[ClientUpdate]) -> np.ndarray:
    """base + sample-weighted mean of deltas, Kahan-summed in client_id order."""
    ups = sorted(updates, key=lambda u: u.client_id)
    if not ups:
        raise InsufficientParticipationError("no updates to aggregate")
    total = sum(u.sample_count for u in ups)
    acc = np.zeros_like(base_params)
    comp = np.zeros_like(base_params)
    for u in ups:
        term = (u.sample_count / total) * u.delta - comp
        tally = acc + term
        comp = (tally - acc) - term
        acc = tally
    return base_params + acc


class FederationHub:
    def __init__(
        self,
        initial_params,
        policy: AcceptancePolicy | None = None,
        *,
        min_clients: int = 2,
    ):
        params = np.asarray(initial_params, dtype=np.float64)
        self.policy = policy if policy is not None else AcceptancePolicy()
        self.default_min_clients = min_clients
        self._model = GlobalModel(0, params.copy(), None, -1)
        self._clients: dict[str, int] = {}
        self._round: RoundState | None = None
        self._next_round_id = 0
        self._lock = threading.Lock()
        self.audit: list[dict] = []

    # -- queries ------------------------------------------------------------

    def current_model(self) -> GlobalModel:
        return self._model

    def current_round(self) -> RoundState | None:
        return self._round

    def registered_clients(self) -> list[str]:
        return sorted(self._clients)

    # -- lifecycle ----------------------------------------------------------

    def register_client(self, client_id: str) -> GlobalModel:
        """Record the client and hand back the latest accepted model (idempotent)."""
        with self._lock:
            if client_id not in self._clients:
                self._clients[client_id] = len(self._clients)
                self._log({"event": "register", "client_id": client_id})
            return self._model

    def open_round(self, min_clients: int | None = None, deadline_ticks: int = 1000,
                   opened_tick: int = 0) -> RoundState:
        with self._lock:
            if self._round is not None and self._round.status is RoundStatus.OPEN:
                raise HubError(f"round {self._round.round_id} is still open")
            if min_clients is None:
                min_clients = self.default_min_clients
            if min_clients < 1:
                raise HubError("min_clients must be positive")
            rnd = RoundState(
                round_id=self._next_round_id,
                base_version=self._model.version,
                min_clients=min_clients,
                deadline_ticks=deadline_ticks,
                opened_tick=opened_tick,
            )
            self._next_round_id += 1
            self._round = rnd
            self._log(
                {
                    "event": "round_open",
                    "round_id": rnd.round_id,
                    "base_version": rnd.base_version,
                    "min_clients": min_clients,
                    "deadline_ticks": deadline_ticks,
                }
            )
            return rnd

    def submit_update(self, update: ClientUpdate) -> SubmitResult:
        with self._lock:
            result = self._check_update(update)
            if result.status is SubmitStatus.ACCEPTED:
                self._round.received[update.client_id] = update
            self._log(
                {
                    "event": "submit",
                    "round_id": update.round_id,
                    "client_id": update.client_id,
                    "status": result.status.value,
                    "reason": result.reason,
                    "sample_count": update.sample_count,
                }
            )
            return result

    def _check_update(self, update: ClientUpdate) -> SubmitResult:
        rnd = self._round
        if rnd is None or rnd.status is not RoundStatus.OPEN:
            return SubmitResult(SubmitStatus.REJECTED_MALFORMED, "no round open")
        if update.round_id != rnd.round_id:
            return SubmitResult(
                SubmitStatus.REJECTED_MALFORMED,
                f"update targets round {update.round_id}, open round is {rnd.round_id}",
            )
        if update.sample_count < 1:
            return SubmitResult(SubmitStatus.REJECTED_MALFORMED, "sample_count < 1")
        if update.delta.shape != self._model.params.shape:
            return SubmitResult(
                SubmitStatus.REJECTED_MALFORMED,
                f"delta length {update.delta.shape[0]} != {self._model.params.shape[0]}",
            )
        if not np.isfinite(update.delta).all():
            return SubmitResult(SubmitStatus.REJECTED_MALFORMED, "delta not finite")
        if update.base_version != rnd.base_version:
            return SubmitResult(
                SubmitStatus.REJECTED_STALE,
                f"built on version {update.base_version}, round base is {rnd.base_version}",
            )
        if update.client_id in rnd.received:
            return SubmitResult(
                SubmitStatus.REJECTED_DUPLICATE,
                f"client {update.client_id} already submitted this round",
            )
        return SubmitResult(SubmitStatus.ACCEPTED)

    def aggregate(self) -> np.ndarray:
        """Weighted-average the received deltas into candidate parameters."""
        with self._lock:
            rnd = self._round
            if rnd is None or rnd.status is not RoundStatus.OPEN:
                raise HubError("no open round to aggregate")
            if len(rnd.received) < rnd.min_clients:
                raise InsufficientParticipationError(
                    f"round {rnd.round_id}: {len(rnd.received)} updates < "
                    f"min_clients {rnd.min_clients}"
                )
            rnd.status = RoundStatus.AGGREGATING
            candidate = federated_average(self._model.params, rnd.received.values())
            self._log(
                {
                    "event": "aggregate",
                    "round_id": rnd.round_id,
                    "n_updates": len(rnd.received),
                    "total_samples": sum(u.sample_count for u in rnd.received.values()),
                }
            )
            return candidate

    def consensus_accept(
        self, candidate: np.ndarray, evaluator: Callable[[np.ndarray], float]
    ) -> ConsensusDecision:
        """Validation-gated acceptance of an aggregated candidate.

        Both the candidate and the incumbent are evaluated on the same held-out
        set; the candidate is accepted iff its accuracy is no worse than the
        incumbent's minus epsilon_tol. On rollback the global model is
        untouched. Evaluator failures roll back with a diagnostic.
        """
        with self._lock:
            rnd = self._round
            if rnd is None or rnd.status is not RoundStatus.AGGREGATING:
                raise HubError("consensus_accept requires an aggregating round")
            candidate = np.asarray(candidate, dtype=np.float64)
            if not np.isfinite(candidate).all():
                decision = self._rollback(rnd, None, None, "candidate not finite")
                return decision
            try:
                previous_accuracy = float(evaluator(self._model.params))
                candidate_accuracy = float(evaluator(candidate))
            except Exception as exc:  # evaluator failure is a rollback, not a crash
                return self._rollback(rnd, None, None, f"evaluator failed: {exc}")
            if candidate_accuracy >= previous_accuracy - self.policy.epsilon_tol:
                model = GlobalModel(
                    version=self._model.version + 1,
                    params=candidate.copy(),
                    validation_accuracy=candidate_accuracy,
                    created_round=rnd.round_id,
                )
                self._model = model
                rnd.status = RoundStatus.CLOSED
                self._log(
                    {
                        "event": "accept",
                        "round_id": rnd.round_id,
                        "version": model.version,
                        "candidate_accuracy": candidate_accuracy,
                        "previous_accuracy": previous_accuracy,
                    }
                )
                return ConsensusDecision(
                    True, model, candidate_accuracy, previous_accuracy, "accepted"
                )
            return self._rollback(
                rnd,
                candidate_accuracy,
                previous_accuracy,
                f"accuracy {candidate_accuracy:.6f} < "
                f"{previous_accuracy:.6f} - tol {self.policy.epsilon_tol}",
            )

    def _rollback(
        self,
        rnd: RoundState,
        candidate_accuracy: float | None,
        previous_accuracy: float | None,
        reason: str,
    ) -> ConsensusDecision:
        rnd.status = RoundStatus.CLOSED
        self._log(
            {
                "event": "rollback",
                "round_id": rnd.round_id,
                "candidate_accuracy": candidate_accuracy,
                "previous_accuracy": previous_accuracy,
                "reason": reason,
            }
        )
        return ConsensusDecision(
            False, self._model, candidate_accuracy, previous_accuracy, reason
        )

    def abandon_round(self, reason: str) -> None:
        """Close the open round without aggregating (harness policy for
        insufficient participation)."""
        with self._lock:
            rnd = self._round
            if rnd is None or rnd.status is RoundStatus.CLOSED:
                raise HubError("no active round to abandon")
            rnd.status = RoundStatus.CLOSED
            self._log(
                {
                    "event": "abandon",
                    "round_id": rnd.round_id,
                    "received": len(rnd.received),
                    "reason": reason,
                }
            )

    def distribute(self) -> list[tuple[str, bytes]]:
        """One broadcast payload per registered client; identical bytes each."""
        with self._lock:
            model = self._model
            payload = encode_payload(
                ParamPayload(model.params, sample_count=0, base_version=model.version)
            )
            targets = sorted(self._clients)
            self._log(
                {
                    "event": "distribute",
                    "version": model.version,
                    "n_clients": len(targets),
                    "payload_bytes": len(payload),
                }
            )
            return [(client_id, payload) for client_id in targets]

    # -- audit ----------------------------------------------------------------

    def _log(self, event: dict) -> None:
        self.audit.append(event)

    def write_audit(self, path) -> None:
        with open(path, "w") as fh:
            for event in self.audit:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
