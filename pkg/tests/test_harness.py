"""Harness: generation, simulation behaviors, analysis tools, config, CLI."""

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from pli_sim.harness import (
    SimConfig,
    ab_test,
    drift_scenario,
    hyperparameter_sweep,
    parse_metrics_csv,
    run_centralized_baseline,
    run_simulation,
)
from pli_sim.harness.config import ConfigError, parse_grid_file, sim_config_from_file
from pli_sim.harness.generator import (
    ArchetypeSchedule,
    default_archetypes,
    drift_archetypes,
    generate_dataset,
)
from pli_sim.harness.metrics import CSV_COLUMNS, MetricsRecord, export_metrics
from pli_sim.harness.model_io import load_model, save_model
from pli_sim.harness.seeds import derive_key, derive_seed
from pli_sim.scoring import TrackingVariable
from pli_sim.trainer import Standardizer, average_scores
from pli_sim.transport import LatencySpec

MIX = (("HighEngaged", 0.5), ("LowEngaged", 0.5))
SCHEDULE = ArchetypeSchedule(default_archetypes())

TINY = SimConfig(
    n_clients=3, learners_per_client=8, weeks=4, rounds=3, validation_learners=40
)


# ---------------------------------------------------------------------------
# Seeds and generator
# ---------------------------------------------------------------------------


def test_derive_seed_stable_and_sensitive():
    assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)
    assert derive_seed(1, "a", 2) != derive_seed(1, "a", 3)
    assert derive_seed(1, "a", 2) != derive_seed(2, "a", 2)
    assert derive_seed(1, "ab") != derive_seed(1, "a", "b")
    assert len(derive_key(5, "transport")) == 32


def test_generator_deterministic():
    a = generate_dataset(11, "client-000", 6, 3, MIX, SCHEDULE)
    b = generate_dataset(11, "client-000", 6, 3, MIX, SCHEDULE)
    assert a == b


def test_generator_all_high_mix():
    data = generate_dataset(5, "c", 20, 2, (("HighEngaged", 1.0),), SCHEDULE)
    assert all(l.tendency == "High" for l in data.learners)


def test_generator_adding_learners_keeps_existing_streams():
    small = generate_dataset(3, "c", 4, 3, MIX, SCHEDULE)
    large = generate_dataset(3, "c", 8, 3, MIX, SCHEDULE)
    assert large.learners[:4] == small.learners


def test_generator_tendency_separation_on_large_sample():
    # Default archetypes must separate by at least 2 points of average score.
    data = generate_dataset(123, "sep", 1000, 1, MIX, SCHEDULE)
    snapshots, truth = data.window_rows(0, 1)
    scores = average_scores(snapshots)
    high = scores[truth == 1].mean()
    low = scores[truth == 0].mean()
    assert high - low >= 2.0


def test_generator_respects_domains_under_full_drift():
    drifted = ArchetypeSchedule(default_archetypes(), drift_week=0, drift_factor=1.0)
    data = generate_dataset(9, "d", 30, 2, MIX, drifted)
    snapshots, _ = data.window_rows(0, 2)
    for s in snapshots:
        assert 0 <= s.activity_completion_pct <= 100
        assert 0 <= s.quiz_avg_pct <= 100
        assert 0 <= s.feedback_avg <= 10


def test_generator_warns_on_degenerate_mix():
    from pli_sim.harness.generator import ArchetypeSpec, VariableDist, _VAR_ORDER

    flat = ArchetypeSpec(
        "Flat",
        tuple((v, VariableDist("uniform", 2.0, 2.0)) for v in _VAR_ORDER),
        "Low",
    )
    schedule = ArchetypeSchedule((flat,))
    with pytest.warns(UserWarning, match="zero-variance"):
        data = generate_dataset(1, "flat", 3, 1, (("Flat", 1.0),), schedule)
    assert len(data.learners) == 3  # warned, not raised


def test_drift_archetypes_factor_bounds():
    base = default_archetypes()
    assert drift_archetypes(base, 0.0) == base
    collapsed = drift_archetypes(base, 1.0)
    d_high = collapsed[0].dist_of(TrackingVariable.T)
    d_low = collapsed[1].dist_of(TrackingVariable.T)
    assert d_high == d_low
    with pytest.raises(ValueError):
        drift_archetypes(base, 1.5)


# ---------------------------------------------------------------------------
# Metrics export
# ---------------------------------------------------------------------------


def sample_records():
    return [
        MetricsRecord(0, 0.912345678, 0.87654321, True, 5, 4230, None, 3),
        MetricsRecord(1, 0.998765432, 0.91, False, 4, 3384, 4.84165895, 6),
    ]


def test_metrics_roundtrip_exact_at_declared_precision(tmp_path):
    records = sample_records()
    csv_path, jsonl_path = export_metrics(records, tmp_path)
    parsed = parse_metrics_csv(csv_path)
    assert parsed == records
    lines = jsonl_path.read_text().splitlines()
    assert len(lines) == 2
    assert json.loads(lines[0])["round_id"] == 0


def test_metrics_zero_rounds_header_only(tmp_path):
    csv_path, _ = export_metrics([], tmp_path)
    assert csv_path.read_text().strip() == ",".join(CSV_COLUMNS)


def test_metrics_row_count(tmp_path):
    csv_path, _ = export_metrics(sample_records(), tmp_path)
    assert len(csv_path.read_text().splitlines()) == 3


# ---------------------------------------------------------------------------
# Simulation behaviors
# ---------------------------------------------------------------------------


def test_zero_rounds_returns_initial_model():
    res = run_simulation(replace(TINY, rounds=0))
    assert res.final_model.version == 0
    assert (res.final_model.params == 0).all()
    assert res.records == []


def test_simulation_learns_on_tiny_config():
    res = run_simulation(TINY)
    assert res.validation_accuracy > 0.9
    assert res.final_model.version == TINY.rounds


def test_bytes_on_wire_strictly_increases_with_clients():
    r3 = run_simulation(TINY)
    r5 = run_simulation(replace(TINY, n_clients=5))
    for a, b in zip(r3.records, r5.records):
        assert b.bytes_on_wire > a.bytes_on_wire


def test_lossy_channel_yields_stale_or_skipped_rounds():
    cfg = replace(TINY, rounds=6, channel=replace(TINY.channel, loss_probability=0.4))
    res = run_simulation(cfg)
    statuses = [e for e in res.hub.audit if e["event"] == "submit"]
    assert any(e["status"] != "accepted" for e in statuses) or any(
        not r.accepted for r in res.records
    )
    # the run still completes all rounds deterministically
    assert len(res.records) == 6


def test_round_deadline_skips_late_updates():
    # Latency far beyond the deadline: every update arrives too late, all
    # rounds abandon with zero participants, the model never moves.
    cfg = replace(
        TINY,
        deadline_ticks=1,
        channel=replace(TINY.channel, latency=LatencySpec.fixed(50)),
    )
    res = run_simulation(cfg)
    assert all(not r.accepted for r in res.records)
    assert all(r.participating_clients == 0 for r in res.records)
    assert (res.final_model.params == 0).all()


def test_dp_run_reports_epsilon_and_stays_deterministic():
    cfg = replace(TINY, noise=replace(TINY.noise, noise_multiplier=0.5))
    r1 = run_simulation(cfg)
    r2 = run_simulation(cfg)
    assert [r.epsilon_bound for r in r1.records] == [r.epsilon_bound for r in r2.records]
    assert r1.records[0].epsilon_bound > 0
    # cumulative bound grows linearly with rounds
    eps = [r.epsilon_bound for r in r1.records]
    assert eps[1] == pytest.approx(2 * eps[0])
    assert r1.final_model.params.tobytes() == r2.final_model.params.tobytes()


def test_wire_taps_carry_only_parameter_payloads():
    from pli_sim.transport import decode_payload

    res = run_simulation(TINY)
    dim = 9
    for tap in res.wire_taps:
        payload = decode_payload(tap.payload)
        assert payload.params.shape == (dim,)


def test_measure_feature_mode_runs():
    res = run_simulation(replace(TINY, feature_kind="measures"))
    assert res.final_model.params.shape == (5,)
    assert res.validation_accuracy > 0.9


def test_outputs_written(tmp_path):
    res = run_simulation(replace(TINY, output_dir=str(tmp_path / "out")))
    paths = res.out_paths
    for name in ("metrics_csv", "metrics_jsonl", "hub_audit", "channel_audit",
                 "model_params", "model_sidecar", "run_config"):
        assert Path(paths[name]).exists(), name
    parsed = parse_metrics_csv(paths["metrics_csv"])
    assert len(parsed) == TINY.rounds


# ---------------------------------------------------------------------------
# Drift
# ---------------------------------------------------------------------------


def test_drift_factor_zero_identical_to_plain_run():
    plain = run_simulation(TINY)
    drifted = drift_scenario(TINY, drift_week=2, factor=0.0)
    assert plain.records == drifted.records
    assert plain.final_model.params.tobytes() == drifted.final_model.params.tobytes()


def test_drift_pre_drift_rounds_byte_identical():
    cfg = replace(TINY, weeks=6, rounds=6, training_window_weeks=2)
    plain = run_simulation(cfg)
    drifted = drift_scenario(cfg, drift_week=4, factor=0.9)
    onset = drifted.drift_summary["drift_round"]
    assert onset is not None and onset > 0
    assert plain.records[:onset] == drifted.records[:onset]
    assert plain.records[onset:] != drifted.records[onset:]


def test_drift_regression_baseline():
    # Frozen regression run: symmetric drift lowers attainable accuracy; the
    # federated model must dip and then track the post-drift oracle within 2
    # rounds of a fully post-drift training window.
    cfg = SimConfig(
        n_clients=5,
        learners_per_client=20,
        weeks=12,
        rounds=12,
        validation_learners=200,
        training_window_weeks=3,
        master_seed=42,
    )
    res = drift_scenario(cfg, drift_week=5, factor=0.8)
    summary = res.drift_summary
    assert summary["drift_round"] == 5
    assert summary["pre_drift_accuracy"] == 1.0
    assert summary["min_post_drift_accuracy"] < 0.98  # the dip is real
    oracle = run_centralized_baseline(cfg, drift_week=5, drift_factor=0.8)
    # recovery horizon frozen from the calibration run: within 2 rounds of the
    # first fully post-drift window (round 7) accuracy tracks the oracle.
    tracked = res.records[7].global_validation_accuracy
    assert abs(tracked - oracle.validation_accuracy) <= 0.03
    assert abs(res.validation_accuracy - oracle.validation_accuracy) <= 0.03


def test_drift_week_validation():
    with pytest.raises(ValueError):
        drift_scenario(TINY, drift_week=99)


# ---------------------------------------------------------------------------
# A/B test
# ---------------------------------------------------------------------------


def trained_and_zero_models():
    from pli_sim.trainer import LogisticModel, TrainConfig, fit_local_model

    data = generate_dataset(21, "ab", 40, 2, MIX, SCHEDULE)
    snapshots, truth = data.window_rows(0, 2)
    fit = fit_local_model(snapshots, TrainConfig(seed=3))
    zero = LogisticModel(
        np.zeros(8), 0.0, fit.model.trained_on, Standardizer.identity(8)
    )
    eval_data = generate_dataset(22, "ab-eval", 30, 2, MIX, SCHEDULE)
    eval_snapshots, eval_truth = eval_data.window_rows(0, 2)
    return fit.model, zero, eval_snapshots, eval_truth


def test_ab_test_self_comparison_ties():
    model, _, snapshots, truth = trained_and_zero_models()
    report = ab_test(model, model, snapshots, truth)
    assert report.delta == 0.0 and report.winner == "tie"
    assert report.n == len(snapshots)


def test_ab_test_trained_beats_zero_model():
    model, zero, snapshots, truth = trained_and_zero_models()
    report = ab_test(model, zero, snapshots, truth)
    assert report.winner == "a"
    assert report.accuracy_a > report.accuracy_b


def test_ab_test_derives_labels_when_missing():
    model, zero, snapshots, _ = trained_and_zero_models()
    report = ab_test(model, zero, snapshots)
    assert report.winner == "a"


def test_ab_test_errors():
    from pli_sim.trainer import LogisticModel
    from pli_sim.scoring import Granularity

    model, _, snapshots, truth = trained_and_zero_models()
    short = LogisticModel(np.zeros(4), 0.0, Granularity.WEEKLY, Standardizer.identity(4))
    with pytest.raises(ValueError):
        ab_test(model, short, snapshots, truth)
    with pytest.raises(ValueError):
        ab_test(model, model, [], [])


# ---------------------------------------------------------------------------
# Hyperparameter sweep
# ---------------------------------------------------------------------------


def test_sweep_singleton_matches_run_simulation():
    entries = hyperparameter_sweep({"learning_rate": [TINY.train.learning_rate]}, TINY)
    direct = run_simulation(TINY)
    assert len(entries) == 1
    assert entries[0].final_accuracy == direct.validation_accuracy


def test_sweep_duplicate_points_identical_scores():
    entries = hyperparameter_sweep({"epochs": [50, 50]}, replace(TINY, rounds=2))
    assert entries[0].final_accuracy == entries[1].final_accuracy


def test_sweep_ranks_working_lr_first():
    # On noiseless separable data any nonzero step already points the
    # boundary the right way (accuracy is direction-only), so both rates tie
    # at 1.0. With DP noise on, lr 1e-6 produces deltas that drown in the
    # noise while lr 0.1 keeps a usable signal: the working rate must win
    # strictly regardless of grid order.
    from pli_sim.privacy import NoiseConfig

    cfg = replace(TINY, noise=NoiseConfig(noise_multiplier=0.3))
    entries = hyperparameter_sweep({"learning_rate": [1e-6, 0.1]}, cfg)
    assert entries[0].params == {"learning_rate": 0.1}
    assert entries[0].final_accuracy > entries[1].final_accuracy


def test_sweep_records_per_point_errors_and_continues():
    with np.errstate(over="ignore", invalid="ignore"):
        entries = hyperparameter_sweep(
            {"learning_rate": [0.1, 1e200]}, replace(TINY, rounds=1)
        )
    by_params = {tuple(e.params.items()): e for e in entries}
    bad = by_params[(("learning_rate", 1e200),)]
    good = by_params[(("learning_rate", 0.1),)]
    assert bad.error is not None and bad.final_accuracy is None
    assert "round 0" in bad.error and "client" in bad.error
    assert good.error is None and good.final_accuracy is not None


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------


def test_model_save_load_roundtrip(tmp_path):
    params = np.array([1.0, -2.0, 0.5])
    std = Standardizer(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    save_model(
        tmp_path / "m", params, version=4, standardizer=std, feature_columns=("a", "b")
    )
    loaded = load_model(tmp_path / "m.params")
    assert loaded.version == 4
    assert np.array_equal(loaded.params, params)
    logistic = loaded.as_logistic()
    assert np.array_equal(logistic.weights, params[:-1])
    assert logistic.bias == 0.5
    assert np.array_equal(logistic.standardizer.mean, std.mean)


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------


def write_config(tmp_path, text):
    path = tmp_path / "config.txt"
    path.write_text(text)
    return path


def test_config_file_parsing(tmp_path):
    path = write_config(
        tmp_path,
        """
        # demo config
        n_clients = 4
        learners_per_client = 6
        weeks = 5
        rounds = 2
        master_seed = 99
        archetype_mix = HighEngaged:0.25, LowEngaged:0.75
        train.learning_rate = 0.2
        train.epochs = 50
        channel.loss_probability = 0.1
        channel.latency_ticks = 2:4
        policy.epsilon_tol = 0.05
        training_window_weeks = 3
        output_dir = runs/demo
        """,
    )
    cfg = sim_config_from_file(path)
    assert cfg.n_clients == 4
    assert cfg.archetype_mix == (("HighEngaged", 0.25), ("LowEngaged", 0.75))
    assert cfg.train.learning_rate == 0.2 and cfg.train.epochs == 50
    assert cfg.channel.loss_probability == 0.1
    assert cfg.channel.latency.kind == "uniform"
    assert cfg.policy.epsilon_tol == 0.05
    assert cfg.training_window_weeks == 3
    assert cfg.output_dir == "runs/demo"


def test_config_overrides(tmp_path):
    path = write_config(tmp_path, "n_clients = 3\n")
    cfg = sim_config_from_file(path, seed_override=7, out_override="elsewhere")
    assert cfg.master_seed == 7 and cfg.output_dir == "elsewhere"


def test_config_unknown_key_rejected(tmp_path):
    path = write_config(tmp_path, "banana = 1\n")
    with pytest.raises(ConfigError, match="banana"):
        sim_config_from_file(path)


def test_config_bad_mix_rejected(tmp_path):
    path = write_config(tmp_path, "archetype_mix = HighEngaged:0.7, LowEngaged:0.7\n")
    with pytest.raises(ConfigError, match="sum"):
        sim_config_from_file(path)


def test_grid_file_parsing(tmp_path):
    path = tmp_path / "grid.txt"
    path.write_text("learning_rate = 0.1, 0.01\nepochs = 50\n")
    grid = parse_grid_file(path)
    assert grid == {"learning_rate": [0.1, 0.01], "epochs": [50]}
    bad = tmp_path / "bad.txt"
    bad.write_text("nope = 1\n")
    with pytest.raises(ConfigError):
        parse_grid_file(bad)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


@pytest.fixture()
def cli_config(tmp_path):
    out = tmp_path / "out"
    path = write_config(
        tmp_path,
        f"""
        n_clients = 3
        learners_per_client = 6
        weeks = 3
        rounds = 2
        master_seed = 5
        validation_learners = 30
        output_dir = {out}
        """,
    )
    return path, out


def test_cli_run_writes_outputs_and_figure(cli_config):
    from click.testing import CliRunner
    from pli_sim.harness.cli import main

    config_path, out = cli_config
    result = CliRunner().invoke(main, ["run", "--config", str(config_path)])
    assert result.exit_code == 0, result.output
    assert (out / "metrics.csv").exists()
    assert (out / "metrics.png").exists()
    assert (out / "final_model.params").exists()


def test_cli_drift_and_sweep(cli_config, tmp_path):
    from click.testing import CliRunner
    from pli_sim.harness.cli import main

    config_path, out = cli_config
    runner = CliRunner()
    result = runner.invoke(
        main,
        ["drift", "--config", str(config_path), "--drift-week", "1",
         "--factor", "0.5", "--no-figures", "--out", str(tmp_path / "drift_out")],
    )
    assert result.exit_code == 0, result.output
    assert (tmp_path / "drift_out" / "drift_summary.json").exists()

    grid = tmp_path / "grid.txt"
    grid.write_text("learning_rate = 0.1\n")
    result = runner.invoke(
        main,
        ["sweep", "--config", str(config_path), "--grid", str(grid),
         "--no-figures", "--out", str(tmp_path / "sweep_out")],
    )
    assert result.exit_code == 0, result.output
    assert (tmp_path / "sweep_out" / "sweep_results.csv").exists()


def test_cli_abtest(cli_config, tmp_path):
    from click.testing import CliRunner
    from pli_sim.harness.cli import main
    from pli_sim.trainer import write_snapshot_csv

    config_path, out = cli_config
    runner = CliRunner()
    assert runner.invoke(main, ["run", "--config", str(config_path), "--no-figures"]).exit_code == 0

    # second model: different seed
    out_b = tmp_path / "out_b"
    assert (
        runner.invoke(
            main,
            ["run", "--config", str(config_path), "--seed", "6", "--out", str(out_b),
             "--no-figures"],
        ).exit_code
        == 0
    )

    data = generate_dataset(33, "cli-eval", 20, 2, MIX, SCHEDULE)
    snapshots, _ = data.window_rows(0, 2)
    csv_path = tmp_path / "eval.csv"
    write_snapshot_csv(csv_path, snapshots)

    result = runner.invoke(
        main,
        [
            "abtest",
            "--model-a", str(out / "final_model.params"),
            "--model-b", str(out_b / "final_model.params"),
            "--data", str(csv_path),
        ],
    )
    assert result.exit_code == 0, result.output
    report = json.loads(result.output)
    assert set(report) == {"accuracy_a", "accuracy_b", "delta", "winner", "n"}
    assert report["n"] == 40
