"""Hub: round lifecycle, aggregation, consensus gating, audit."""

import itertools

import numpy as np
import pytest

from pli_sim.hub import (
    AcceptancePolicy,
    ClientUpdate,
    FederationHub,
    HubError,
    InsufficientParticipationError,
    RoundStatus,
    SubmitStatus,
    federated_average,
)
from pli_sim.trainer import logistic_gradient


def make_hub(dim=3, tol=0.02, min_clients=2, clients=("c0", "c1", "c2")):
    hub = FederationHub(np.zeros(dim), AcceptancePolicy(epsilon_tol=tol), min_clients=min_clients)
    for cid in clients:
        hub.register_client(cid)
    return hub


def update(cid, delta, n=1, base=0, rnd=0):
    return ClientUpdate(cid, base, np.asarray(delta, dtype=float), n, rnd)


# ---------------------------------------------------------------------------
# Registration and round lifecycle
# ---------------------------------------------------------------------------


def test_register_returns_version_zero_model():
    hub = FederationHub(np.zeros(2))
    model = hub.register_client("alice")
    assert model.version == 0
    assert (model.params == 0).all()


def test_register_idempotent():
    hub = FederationHub(np.zeros(2))
    assert hub.register_client("a") == hub.register_client("a")
    assert hub.registered_clients() == ["a"]


def test_register_mid_round_returns_accepted_not_candidate():
    hub = make_hub()
    hub.open_round(2)
    hub.submit_update(update("c0", [1, 1, 1]))
    hub.submit_update(update("c1", [1, 1, 1]))
    hub.aggregate()  # candidate exists but is not yet accepted
    model = hub.register_client("latecomer")
    assert model.version == 0
    assert (model.params == 0).all()


def test_round_ids_increase_and_concurrent_open_rejected():
    hub = make_hub()
    r0 = hub.open_round(2)
    assert r0.round_id == 0
    with pytest.raises(HubError):
        hub.open_round(2)
    hub.abandon_round("test")
    r1 = hub.open_round(2)
    assert r1.round_id == 1
    assert r1.base_version == hub.current_model().version


# ---------------------------------------------------------------------------
# Submission statuses
# ---------------------------------------------------------------------------


def test_submit_statuses():
    hub = make_hub()
    hub.open_round(2)
    assert hub.submit_update(update("c0", [1, 2, 3])).status is SubmitStatus.ACCEPTED
    assert (
        hub.submit_update(update("c0", [9, 9, 9])).status is SubmitStatus.REJECTED_DUPLICATE
    )
    stale = hub.submit_update(update("c1", [1, 2, 3], base=-1))
    assert stale.status is SubmitStatus.REJECTED_STALE
    wrong_len = hub.submit_update(update("c1", [1, 2]))
    assert wrong_len.status is SubmitStatus.REJECTED_MALFORMED
    bad = hub.submit_update(update("c1", [np.inf, 0, 0]))
    assert bad.status is SubmitStatus.REJECTED_MALFORMED


def test_submit_outside_round_is_malformed_with_reason():
    hub = make_hub()
    result = hub.submit_update(update("c0", [0, 0, 0]))
    assert result.status is SubmitStatus.REJECTED_MALFORMED
    assert "round" in result.reason


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def test_aggregate_identical_deltas():
    hub = make_hub()
    hub.open_round(2)
    d = [0.5, -1.0, 2.0]
    hub.submit_update(update("c0", d, n=3))
    hub.submit_update(update("c1", d, n=9))
    assert np.allclose(hub.aggregate(), d)


def test_aggregate_weighted_example():
    hub = make_hub(dim=1)
    hub.open_round(2)
    hub.submit_update(update("c0", [0.0], n=1))
    hub.submit_update(update("c1", [4.0], n=3))
    assert np.allclose(hub.aggregate(), [3.0])


def test_aggregate_single_client_conservation():
    hub = make_hub(min_clients=1)
    hub.open_round(1)
    hub.submit_update(update("c0", [1.25, -2.5, 0.75], n=1234))
    assert np.array_equal(hub.aggregate(), np.array([1.25, -2.5, 0.75]))


def test_aggregate_insufficient_participation():
    hub = make_hub(min_clients=2)
    hub.open_round(2)
    hub.submit_update(update("c0", [1, 1, 1]))
    with pytest.raises(InsufficientParticipationError):
        hub.aggregate()


def test_aggregation_permutation_invariant_bitwise():
    rng = np.random.default_rng(0)
    updates = [
        update(f"c{i}", rng.normal(size=6), n=int(rng.integers(1, 50))) for i in range(5)
    ]
    base = rng.normal(size=6)
    reference = federated_average(base, updates)
    for perm in itertools.permutations(updates):
        assert federated_average(base, list(perm)).tobytes() == reference.tobytes()


def test_federated_one_step_equals_centralized_step():
    # Equal partitions, one full-batch GD step per client from the shared
    # base: the weighted-average candidate must equal the centralized step.
    rng = np.random.default_rng(42)
    n_clients, rows, dim = 4, 8, 5
    x = rng.normal(size=(n_clients * rows, dim))
    y = (x[:, 0] > 0).astype(float)
    w0 = rng.normal(scale=0.1, size=dim)
    lr, l2 = 0.5, 1e-3

    hub = FederationHub(w0, min_clients=n_clients)
    for i in range(n_clients):
        hub.register_client(f"c{i}")
    hub.open_round(n_clients)
    for i in range(n_clients):
        xs = x[i * rows : (i + 1) * rows]
        ys = y[i * rows : (i + 1) * rows]
        grad, _ = logistic_gradient(w0, 0.0, xs, ys, l2)
        local = w0 - lr * grad
        hub.submit_update(update(f"c{i}", local - w0, n=rows))
    candidate = hub.aggregate()

    grad_all, _ = logistic_gradient(w0, 0.0, x, y, l2)
    centralized = w0 - lr * grad_all
    assert np.abs(candidate - centralized).max() < 1e-9


# ---------------------------------------------------------------------------
# Consensus
# ---------------------------------------------------------------------------


def constant_evaluator(value):
    return lambda params: value


def test_consensus_accepts_identical_candidate():
    hub = make_hub()
    hub.open_round(2)
    hub.submit_update(update("c0", [0, 0, 0]))
    hub.submit_update(update("c1", [0, 0, 0]))
    candidate = hub.aggregate()
    decision = hub.consensus_accept(candidate, constant_evaluator(0.8))
    assert decision.accepted
    assert hub.current_model().version == 1
    assert hub.current_model().validation_accuracy == 0.8


def test_consensus_rollback_on_regression():
    hub = make_hub(tol=0.02)
    hub.open_round(2)
    hub.submit_update(update("c0", [5, 5, 5]))
    hub.submit_update(update("c1", [5, 5, 5]))
    candidate = hub.aggregate()

    def evaluator(params):
        return 0.9 if (params == 0).all() else 0.1

    before = hub.current_model()
    decision = hub.consensus_accept(candidate, evaluator)
    assert not decision.accepted
    assert hub.current_model() is before
    assert hub.current_model().params.tobytes() == before.params.tobytes()
    assert decision.candidate_accuracy == 0.1
    assert decision.previous_accuracy == 0.9


def test_consensus_vacuous_tolerance_always_accepts():
    hub = make_hub(tol=1.0)
    hub.open_round(2)
    hub.submit_update(update("c0", [9, 9, 9]))
    hub.submit_update(update("c1", [9, 9, 9]))
    candidate = hub.aggregate()

    def evaluator(params):
        return 1.0 if (params == 0).all() else 0.0

    assert hub.consensus_accept(candidate, evaluator).accepted


def test_consensus_evaluator_failure_rolls_back():
    hub = make_hub()
    hub.open_round(2)
    hub.submit_update(update("c0", [1, 1, 1]))
    hub.submit_update(update("c1", [1, 1, 1]))
    candidate = hub.aggregate()

    def broken(params):
        raise RuntimeError("validation store offline")

    decision = hub.consensus_accept(candidate, broken)
    assert not decision.accepted
    assert "validation store offline" in decision.reason
    assert hub.current_model().version == 0


def test_version_sequence_strictly_increasing_no_gaps():
    hub = make_hub(tol=1.0)
    versions = [hub.current_model().version]
    for r in range(5):
        hub.open_round(2)
        hub.submit_update(update("c0", [0.1, 0, 0], base=versions[-1], rnd=r))
        hub.submit_update(update("c1", [0.1, 0, 0], base=versions[-1], rnd=r))
        hub.consensus_accept(hub.aggregate(), constant_evaluator(0.5))
        versions.append(hub.current_model().version)
    assert versions == list(range(6))


def test_poisoned_update_triggers_rollback_and_byte_identical_model():
    rng = np.random.default_rng(123)
    # Good model separates; evaluator measures sign agreement on a fixed set.
    good = np.array([2.0, -1.0, 0.5])
    xs = rng.normal(size=(40, 3))
    truth = (xs @ good > 0).astype(int)

    def evaluator(params):
        return float(((xs @ params > 0).astype(int) == truth).mean())

    hub = FederationHub(good, AcceptancePolicy(epsilon_tol=0.02), min_clients=2)
    hub.register_client("honest")
    hub.register_client("attacker")
    hub.open_round(2)
    hub.submit_update(update("honest", [0.001, 0.001, 0.0], n=10))
    # Attacker flips the model sign with a dominating sample count.
    hub.submit_update(update("attacker", -3.0 * good, n=10**6))
    before = hub.current_model().params.tobytes()
    decision = hub.consensus_accept(hub.aggregate(), evaluator)
    assert not decision.accepted
    assert hub.current_model().params.tobytes() == before
    assert decision.candidate_accuracy < decision.previous_accuracy - 0.02


# ---------------------------------------------------------------------------
# Distribution and audit
# ---------------------------------------------------------------------------


def test_distribute_identical_payload_bytes_per_client():
    hub = make_hub()
    broadcasts = hub.distribute()
    assert [cid for cid, _ in broadcasts] == ["c0", "c1", "c2"]
    payloads = {payload for _, payload in broadcasts}
    assert len(payloads) == 1


def test_distribute_empty_when_no_clients():
    hub = FederationHub(np.zeros(2))
    assert hub.distribute() == []


def test_distribute_carries_latest_version():
    from pli_sim.transport import decode_payload

    hub = make_hub(tol=1.0)
    hub.open_round(2)
    hub.submit_update(update("c0", [1, 0, 0]))
    hub.submit_update(update("c1", [1, 0, 0]))
    hub.consensus_accept(hub.aggregate(), constant_evaluator(0.7))
    _, payload = hub.distribute()[0]
    decoded = decode_payload(payload)
    assert decoded.base_version == hub.current_model().version == 1
    assert np.allclose(decoded.params, hub.current_model().params)


def test_round_status_transitions():
    hub = make_hub(tol=1.0)
    rnd = hub.open_round(2)
    assert rnd.status is RoundStatus.OPEN
    hub.submit_update(update("c0", [0, 0, 0]))
    hub.submit_update(update("c1", [0, 0, 0]))
    candidate = hub.aggregate()
    assert rnd.status is RoundStatus.AGGREGATING
    late = hub.submit_update(update("c2", [0, 0, 0]))
    assert late.status is SubmitStatus.REJECTED_MALFORMED
    hub.consensus_accept(candidate, constant_evaluator(0.5))
    assert rnd.status is RoundStatus.CLOSED


def test_audit_contains_lifecycle_events(tmp_path):
    import json

    hub = make_hub(tol=1.0)
    hub.open_round(2)
    hub.submit_update(update("c0", [0, 0, 0]))
    hub.submit_update(update("c1", [0, 0, 0]))
    hub.consensus_accept(hub.aggregate(), constant_evaluator(0.5))
    hub.distribute()
    path = tmp_path / "audit.jsonl"
    hub.write_audit(path)
    events = [json.loads(line)["event"] for line in path.read_text().splitlines()]
    for expected in ("register", "round_open", "submit", "aggregate", "accept", "distribute"):
        assert expected in events


def test_concurrent_submissions_serialize_cleanly():
    from concurrent.futures import ThreadPoolExecutor

    n = 16
    hub = make_hub(clients=tuple(f"c{i}" for i in range(n)), min_clients=n)
    hub.open_round(n)

    def submit(i):
        return hub.submit_update(update(f"c{i}", [float(i), 0, 0]))

    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(submit, range(n)))
    assert all(r.status is SubmitStatus.ACCEPTED for r in results)
    rnd = hub.current_round()
    assert len(rnd.received) == n
    # aggregation result is independent of the racy arrival order
    assert np.isfinite(hub.aggregate()).all()


def test_hub_state_holds_only_parameter_space_values():
    from pli_sim.scoring import TrackingSnapshot

    hub = make_hub()
    hub.open_round(2)
    hub.submit_update(update("c0", [1, 2, 3]))

    seen = set()

    def walk(obj):
        if id(obj) in seen:
            return
        seen.add(id(obj))
        assert not isinstance(obj, TrackingSnapshot)
        if isinstance(obj, dict):
            for v in obj.values():
                walk(v)
        elif isinstance(obj, (list, tuple, set)):
            for v in obj:
                walk(v)
        elif hasattr(obj, "__dict__"):
            for v in vars(obj).values():
                walk(v)

    walk(hub)
