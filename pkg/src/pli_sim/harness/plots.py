"""Figure rendering for simulation reports.

Figures are written next to the delimited metrics output; nothing here is
interactive and the Agg backend is forced so the CLI works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def render_run_report(records, out_dir, *, drift_round: int | None = None) -> Path:
    """Accuracy and wire-traffic panels over rounds -> metrics.png."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rounds = [r.round_id for r in records]
    global_acc = [r.global_validation_accuracy for r in records]
    local_acc = [r.mean_client_local_accuracy for r in records]
    rejected = [r.round_id for r in records if not r.accepted]
    wire = [r.bytes_on_wire for r in records]

    fig, (ax_acc, ax_wire) = plt.subplots(
        2, 1, figsize=(7, 6), sharex=True, gridspec_kw={"height_ratios": [2, 1]}
    )
    ax_acc.plot(rounds, global_acc, "o-", label="global validation", color="tab:blue")
    ax_acc.plot(rounds, local_acc, "s--", label="mean client local", color="tab:orange")
    for r in rejected:
        ax_acc.axvline(r, color="tab:red", alpha=0.25, linewidth=1)
    if drift_round is not None:
        ax_acc.axvline(drift_round, color="tab:purple", linestyle=":", label="drift onset")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0.0, 1.05)
    ax_acc.grid(alpha=0.3)
    ax_acc.legend(loc="lower right", fontsize="small")

    ax_wire.bar(rounds, wire, color="tab:gray")
    ax_wire.set_xlabel("round")
    ax_wire.set_ylabel("bytes on wire")
    ax_wire.grid(alpha=0.3)

    fig.tight_layout()
    path = out_dir / "metrics.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_sweep_report(entries, out_dir) -> Path:
    """Ranked final accuracies per grid point -> sweep.png."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = [
        ", ".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}"
                  for k, v in e.params.items())
        for e in entries
    ]
    scores = [e.final_accuracy if e.final_accuracy is not None else 0.0 for e in entries]

    fig, ax = plt.subplots(figsize=(7, max(2.5, 0.45 * len(entries) + 1)))
    y = range(len(entries))
    ax.barh(list(y), scores, color="tab:blue")
    ax.set_yticks(list(y))
    ax.set_yticklabels(labels, fontsize="small")
    ax.invert_yaxis()
    ax.set_xlabel("final validation accuracy")
    ax.set_xlim(0.0, 1.0)
    ax.grid(axis="x", alpha=0.3)
    fig.tight_layout()
    path = out_dir / "sweep.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
