"""The periodic retraining simulation.

Each round replays the full cycle: the hub distributes the current global
model over the encrypted channel, every client standardizes its local
tracking data, clusters average scores into High/Low performer labels, warm
starts logistic training from the distributed parameters, sanitizes the
resulting delta (clip + optional Gaussian noise), seals it and submits it;
the hub aggregates by sample-weighted averaging and accepts or rolls back the
candidate against a held-out synthetic validation set. Everything is a pure
function of the SimConfig: seeds for data, clustering, noise and the channel
all derive from the master seed.

Data arrives on a week schedule: round r sees the first ceil((r+1)*weeks /
rounds) weeks, and clients train on the trailing `training_window_weeks` of
that (the whole prefix when unset). A drift scenario shifts archetype
parameters from `drift_week` onward, so rounds whose window precedes the
drift are byte-identical to the undrifted run.

Client training runs in parallel worker threads when configured; all hub and
channel interaction happens afterwards in client order, so worker count can
never change output bits.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..hub import ClientUpdate, FederationHub, GlobalModel, SubmitStatus
from ..privacy import NoiseConfig, gaussian_epsilon_bound, sanitize
from ..trainer import (
    Standardizer,
    accuracy,
    fit_local_model,
    pack_params,
    sigmoid,
    snapshots_to_matrix,
    standardize_apply,
    standardize_fit,
    unpack_params,
)
from ..transport import (
    DIR_CLIENT_TO_HUB,
    DIR_HUB_TO_CLIENT,
    LogicalClock,
    MsgType,
    ParamPayload,
    Sealer,
    SimulatedChannel,
    decode_payload,
    decode_sender_id,
    encode_payload,
    open_envelope,
)
from .config import SimConfig
from .generator import ArchetypeSchedule, GeneratedDataset, default_archetypes, generate_dataset
from .metrics import MetricsRecord, export_metrics
from .model_io import save_model
from .seeds import derive_key, derive_seed

HUB_ID = "hub"


class SimulationError(RuntimeError):
    """A module failure inside the run loop, tagged with round and client."""


@dataclass(frozen=True)
class WireTap:
    """Plaintext view of one message for privacy-boundary auditing."""

    src: str
    dst: str
    round_id: int
    msg_type: MsgType
    payload: bytes


@dataclass
class SimResult:
    config: SimConfig
    final_model: GlobalModel
    records: list[MetricsRecord]
    hub: FederationHub
    server_standardizer: Standardizer
    validation_accuracy: float
    transport_key: bytes
    wire_taps: list[WireTap]
    channel_audit: list[dict]
    drift_summary: dict | None = None
    out_paths: dict | None = None


@dataclass
class _ClientState:
    client_id: str
    index: int
    dataset: GeneratedDataset
    sealer: Sealer
    base_version: int
    base_params: np.ndarray


@dataclass(frozen=True)
class _LocalResult:
    delta: np.ndarray
    sample_count: int
    base_version: int
    local_accuracy: float
    clipped: bool
    pre_clip_norm: float


def _weeks_available(round_index: int, weeks: int, rounds: int) -> int:
    """Weeks of data visible at the given round: a growing schedule that
    reaches the full horizon on the final round."""
    if rounds <= 0:
        return weeks
    return max(1, -(-(round_index + 1) * weeks // rounds))


def _window(cfg: SimConfig, round_index: int) -> tuple[int, int]:
    end = min(cfg.weeks, _weeks_available(round_index, cfg.weeks, cfg.rounds))
    if cfg.training_window_weeks is None:
        return 0, end
    return max(0, end - cfg.training_window_weeks), end


def _client_round_work(
    state: _ClientState,
    cfg: SimConfig,
    round_index: int,
    window: tuple[int, int],
) -> _LocalResult:
    """One client's local pipeline for one round. Pure: no shared state."""
    snapshots, _ = state.dataset.window_rows(*window)
    train_cfg = replace(
        cfg.train, seed=derive_seed(cfg.master_seed, "kmeans", state.index, round_index)
    )
    init = unpack_params(state.base_params)
    fit = fit_local_model(
        snapshots,
        train_cfg,
        feature_kind=cfg.feature_kind,
        init=init,
        version=state.base_version,
    )
    delta = pack_params(fit.model.weights, fit.model.bias) - state.base_params
    noise = NoiseConfig(
        noise_multiplier=cfg.noise.noise_multiplier,
        seed=derive_seed(cfg.master_seed, "noise", state.index, round_index),
    )
    sanitized = sanitize(delta, cfg.clip, noise)
    return _LocalResult(
        delta=sanitized.delta,
        sample_count=len(snapshots),
        base_version=state.base_version,
        local_accuracy=fit.train_accuracy,
        clipped=sanitized.clipped,
        pre_clip_norm=sanitized.pre_clip_norm,
    )


def _make_evaluator(valset: GeneratedDataset, window: tuple[int, int], feature_kind: str):
    """Accuracy of a parameter vector on the validation window, measured
    against generator ground truth with a server-side standardizer."""
    snapshots, truth = valset.window_rows(*window)
    raw = snapshots_to_matrix(snapshots, feature_kind)
    standardizer = standardize_fit(raw)
    features = standardize_apply(standardizer, raw).values

    def evaluate(params: np.ndarray) -> float:
        weights, bias = unpack_params(params)
        predictions = (sigmoid(features @ weights + bias) >= 0.5).astype(np.int64)
        return float((predictions == truth).mean())

    return evaluate, standardizer


def run_simulation(
    cfg: SimConfig,
    *,
    drift_week: int | None = None,
    drift_factor: float = 0.0,
    render_figures: bool = False,
) -> SimResult:
    """Execute the full periodic-retraining cycle and return its artifacts.

    Writes metrics, audit logs, the final model and (optionally) report
    figures under cfg.output_dir when it is set.
    """
    schedule = ArchetypeSchedule(
        base=default_archetypes(), drift_week=drift_week, drift_factor=drift_factor
    )
    datasets = [
        generate_dataset(
            cfg.master_seed,
            f"client-{i:03d}",
            cfg.learners_per_client,
            cfg.weeks,
            cfg.archetype_mix,
            schedule,
        )
        for i in range(cfg.n_clients)
    ]
    valset = generate_dataset(
        cfg.master_seed,
        "validation",
        cfg.validation_learners,
        cfg.weeks,
        cfg.archetype_mix,
        schedule,
    )

    n_features = 8 if cfg.feature_kind == "raw" else 4
    dim = n_features + 1
    key = derive_key(cfg.master_seed, "transport")
    clock = LogicalClock()
    channel_cfg = cfg.channel
    if channel_cfg.seed is None:
        channel_cfg = replace(channel_cfg, seed=derive_seed(cfg.master_seed, "channel"))
    channel = SimulatedChannel(channel_cfg, clock)
    hub = FederationHub(np.zeros(dim), cfg.policy, min_clients=cfg.min_clients)
    hub_sealer = Sealer(key, HUB_ID, 0, DIR_HUB_TO_CLIENT)

    clients: list[_ClientState] = []
    for i, dataset in enumerate(datasets):
        client_id = dataset.role
        model0 = hub.register_client(client_id)
        clients.append(
            _ClientState(
                client_id=client_id,
                index=i,
                dataset=dataset,
                sealer=Sealer(key, client_id, i + 1, DIR_CLIENT_TO_HUB),
                base_version=model0.version,
                base_params=model0.params.copy(),
            )
        )

    wire_taps: list[WireTap] = []
    records: list[MetricsRecord] = []
    evaluator = None
    standardizer = Standardizer.identity(n_features)

    for round_index in range(cfg.rounds):
        window = _window(cfg, round_index)
        evaluator, standardizer = _make_evaluator(valset, window, cfg.feature_kind)
        bytes_before = channel.bytes_sent

        rnd = hub.open_round(cfg.min_clients, cfg.deadline_ticks, opened_tick=clock.now)

        # Distribute the current model; a dropped broadcast leaves that client
        # on its previous base, so its update will be rejected as stale.
        for client_id, payload in hub.distribute():
            envelope = hub_sealer.seal(MsgType.MODEL_BROADCAST, rnd.round_id, payload)
            wire_taps.append(
                WireTap(HUB_ID, client_id, rnd.round_id, MsgType.MODEL_BROADCAST, payload)
            )
            channel.send(envelope, HUB_ID, client_id)
        by_id = {c.client_id: c for c in clients}
        for delivery in channel.drain():
            if delivery.dst == HUB_ID:
                continue
            payload = decode_payload(open_envelope(delivery.envelope, key))
            client = by_id[delivery.dst]
            client.base_version = payload.base_version
            client.base_params = payload.params.copy()

        # Local training is pure per client; worker count cannot change bits.
        work = [(c, cfg, round_index, window) for c in clients]

        def guarded(args):
            state = args[0]
            try:
                return _client_round_work(*args)
            except Exception as exc:
                raise SimulationError(
                    f"round {round_index}, client {state.client_id}: {exc}"
                ) from exc

        if cfg.workers == 1:
            local_results = [guarded(args) for args in work]
        else:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                local_results = list(pool.map(guarded, work))

        for client, result in zip(clients, local_results):
            payload = encode_payload(
                ParamPayload(result.delta, result.sample_count, result.base_version)
            )
            envelope = client.sealer.seal(MsgType.UPDATE_SUBMIT, rnd.round_id, payload)
            wire_taps.append(
                WireTap(client.client_id, HUB_ID, rnd.round_id, MsgType.UPDATE_SUBMIT, payload)
            )
            channel.send(envelope, client.client_id, HUB_ID)

        accepted_clients = 0
        for delivery in channel.drain():
            if delivery.dst != HUB_ID:
                continue
            if delivery.deliver_tick - rnd.opened_tick > cfg.deadline_ticks:
                continue  # past the round deadline; resubmission happens next round
            payload = decode_payload(open_envelope(delivery.envelope, key))
            update = ClientUpdate(
                client_id=decode_sender_id(delivery.envelope.sender_id),
                base_version=payload.base_version,
                delta=payload.params,
                sample_count=payload.sample_count,
                round_id=delivery.envelope.round_id,
            )
            if hub.submit_update(update).status is SubmitStatus.ACCEPTED:
                accepted_clients += 1

        current_round = hub.current_round()
        if len(current_round.received) >= cfg.min_clients:
            candidate = hub.aggregate()
            decision = hub.consensus_accept(candidate, evaluator)
            accepted = decision.accepted
            global_accuracy = (
                decision.candidate_accuracy if accepted else decision.previous_accuracy
            )
            if global_accuracy is None:
                global_accuracy = evaluator(hub.current_model().params)
        else:
            hub.abandon_round("insufficient participation")
            accepted = False
            global_accuracy = evaluator(hub.current_model().params)

        clock.advance(1)  # round boundary tick
        records.append(
            MetricsRecord(
                round_id=rnd.round_id,
                global_validation_accuracy=float(global_accuracy),
                mean_client_local_accuracy=float(
                    np.mean([r.local_accuracy for r in local_results])
                ),
                accepted=accepted,
                participating_clients=accepted_clients,
                bytes_on_wire=channel.bytes_sent - bytes_before,
                epsilon_bound=gaussian_epsilon_bound(
                    cfg.noise.noise_multiplier, cfg.dp_delta, rounds=round_index + 1
                ),
                wall_ticks=clock.now,
            )
        )

    if evaluator is None:  # zero-round run: evaluate the initial model
        evaluator, standardizer = _make_evaluator(valset, (0, cfg.weeks), cfg.feature_kind)
    final_accuracy = float(evaluator(hub.current_model().params))

    drift_summary = None
    if drift_week is not None:
        drift_summary = _summarize_drift(cfg, records, drift_week)

    result = SimResult(
        config=cfg,
        final_model=hub.current_model(),
        records=records,
        hub=hub,
        server_standardizer=standardizer,
        validation_accuracy=final_accuracy,
        transport_key=key,
        wire_taps=wire_taps,
        channel_audit=channel.audit,
        drift_summary=drift_summary,
    )
    if cfg.output_dir is not None:
        result.out_paths = _write_outputs(result, render_figures=render_figures)
    return result


def _summarize_drift(cfg: SimConfig, records, drift_week: int) -> dict:
    """Pre/post accuracy exposure for resilience runs.

    recovery_round is the first post-drift round whose accuracy climbs back
    within epsilon_tol of the pre-drift level; it stays None when the drift
    permanently lowers attainable accuracy (classes moved closer together),
    in which case min/final post-drift accuracies tell the story.
    """
    drift_round = next(
        (
            r
            for r in range(cfg.rounds)
            if _weeks_available(r, cfg.weeks, cfg.rounds) > drift_week
        ),
        None,
    )
    summary: dict = {"drift_week": drift_week, "drift_round": drift_round}
    if drift_round is None or drift_round == 0 or not records:
        return summary
    pre = records[drift_round - 1].global_validation_accuracy
    post = [r.global_validation_accuracy for r in records[drift_round:]]
    recovery = next(
        (
            records[drift_round + i].round_id
            for i, acc in enumerate(post)
            if acc >= pre - cfg.policy.epsilon_tol
        ),
        None,
    )
    summary.update(
        {
            "pre_drift_accuracy": pre,
            "min_post_drift_accuracy": min(post) if post else None,
            "final_accuracy": records[-1].global_validation_accuracy,
            "recovery_round": recovery,
        }
    )
    return summary


def _write_outputs(result: SimResult, *, render_figures: bool) -> dict:
    cfg = result.config
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, jsonl_path = export_metrics(result.records, out_dir)
    result.hub.write_audit(out_dir / "hub_audit.jsonl")
    with (out_dir / "channel_audit.jsonl").open("w") as fh:
        for event in result.channel_audit:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
    model = result.final_model
    params_path, sidecar_path = save_model(
        out_dir / "final_model",
        model.params,
        version=model.version,
        standardizer=result.server_standardizer,
        feature_columns=("D", "T", "P", "S", "C", "Q", "R", "F")
        if cfg.feature_kind == "raw"
        else ("conscientiousness", "motivation", "understanding", "engagement"),
        extra={
            "validation_accuracy": result.validation_accuracy,
            "created_round": model.created_round,
        },
    )
    (out_dir / "run_config.json").write_text(
        json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n"
    )
    paths = {
        "metrics_csv": csv_path,
        "metrics_jsonl": jsonl_path,
        "hub_audit": out_dir / "hub_audit.jsonl",
        "channel_audit": out_dir / "channel_audit.jsonl",
        "model_params": params_path,
        "model_sidecar": sidecar_path,
        "run_config": out_dir / "run_config.json",
    }
    if result.drift_summary is not None:
        drift_path = out_dir / "drift_summary.json"
        drift_path.write_text(json.dumps(result.drift_summary, sort_keys=True, indent=2) + "\n")
        paths["drift_summary"] = drift_path
    if render_figures:
        from .plots import render_run_report

        drift_round = (result.drift_summary or {}).get("drift_round")
        paths["figure"] = render_run_report(
            result.records, out_dir, drift_round=drift_round
        )
    return paths


def drift_scenario(
    cfg: SimConfig, drift_week: int, factor: float = 0.5, *, render_figures: bool = False
) -> SimResult:
    """Run the simulation with archetypes shifting toward each other at
    drift_week. factor 0 reproduces run_simulation exactly."""
    if not 0 <= drift_week < cfg.weeks:
        raise ValueError(f"drift_week must lie in [0, {cfg.weeks})")
    return run_simulation(
        cfg, drift_week=drift_week, drift_factor=factor, render_figures=render_figures
    )


@dataclass(frozen=True)
class CentralizedResult:
    params: np.ndarray
    standardizer: Standardizer
    validation_accuracy: float
    train_accuracy: float


def run_centralized_baseline(
    cfg: SimConfig, *, drift_week: int | None = None, drift_factor: float = 0.0
) -> CentralizedResult:
    """Train one model on the pooled client data (final-round window) and
    evaluate it on the same validation set the simulation uses. This is the
    oracle the federated run is compared against."""
    schedule = ArchetypeSchedule(
        base=default_archetypes(), drift_week=drift_week, drift_factor=drift_factor
    )
    window = _window(cfg, cfg.rounds - 1) if cfg.rounds else (0, cfg.weeks)
    pooled = []
    for i in range(cfg.n_clients):
        dataset = generate_dataset(
            cfg.master_seed,
            f"client-{i:03d}",
            cfg.learners_per_client,
            cfg.weeks,
            cfg.archetype_mix,
            schedule,
        )
        snapshots, _ = dataset.window_rows(*window)
        pooled.extend(snapshots)

    train_cfg = replace(cfg.train, seed=derive_seed(cfg.master_seed, "centralized"))
    fit = fit_local_model(pooled, train_cfg, feature_kind=cfg.feature_kind)

    valset = generate_dataset(
        cfg.master_seed,
        "validation",
        cfg.validation_learners,
        cfg.weeks,
        cfg.archetype_mix,
        schedule,
    )
    val_snapshots, truth = valset.window_rows(*window)
    val_raw = snapshots_to_matrix(val_snapshots, cfg.feature_kind)
    val_features = standardize_apply(fit.standardizer, val_raw)
    val_accuracy = accuracy(fit.model, val_features, truth)
    return CentralizedResult(
        params=pack_params(fit.model.weights, fit.model.bias),
        standardizer=fit.standardizer,
        validation_accuracy=val_accuracy,
        train_accuracy=fit.train_accuracy,
    )
