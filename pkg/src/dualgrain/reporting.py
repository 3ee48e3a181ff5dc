"""Run reports: delimited tables, CKA matrix, embedding export, and figures.

Outputs are deterministic: re-emitting from the same results.json produces
byte-identical files.
"""

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import StateError
from .harness import RunResult


def accuracy_row(result):
    """Session accuracies (percent, 2 decimals) plus their mean, Table-style."""
    cells = [round(100.0 * a, 2) for a in result.session_accuracies]
    average = round(sum(cells) / len(cells), 2)
    return cells + [average]


def write_table_csv(results, path):
    n_sessions = max(len(r.sessions) for r in results)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method"] + [str(i + 1) for i in range(n_sessions)] + ["Average"])
        for r in results:
            writer.writerow([r.method] + [f"{v:.2f}" for v in accuracy_row(r)])


def write_cka_csv(result, path):
    if result.cka_labels is None:
        return False
    matrix = np.asarray(result.cka_matrix)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([""] + result.cka_labels)
        for label, row in zip(result.cka_labels, matrix):
            writer.writerow([label] + [repr(float(v)) for v in row])
    return True


def write_embeddings(result, bin_path, manifest_path):
    if result.final_embeddings is None:
        return False
    data = np.ascontiguousarray(result.final_embeddings, dtype=np.float32)
    with open(bin_path, "wb") as fh:
        fh.write(data.tobytes())
    manifest = {
        "dtype": "float32",
        "order": "C",
        "shape": list(data.shape),
        "labels": [int(l) for l in result.final_embedding_labels],
        "file": os.path.basename(bin_path),
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return True


# ---------------------------------------------------------------------------
# figures


def plot_accuracy_curves(results, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for r in results:
        accs = [100.0 * a for a in r.session_accuracies]
        ax.plot(range(1, len(accs) + 1), accs, marker="o", label=r.method)
    ax.set_xlabel("session")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 102)
    ax.set_xticks(range(1, max(len(r.sessions) for r in results) + 1))
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_cka_heatmap(result, path):
    if result.cka_labels is None:
        return False
    matrix = np.asarray(result.cka_matrix)
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(matrix, vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(len(result.cka_labels)))
    ax.set_yticks(range(len(result.cka_labels)))
    ax.set_xticklabels(result.cka_labels, rotation=90, fontsize=7)
    ax.set_yticklabels(result.cka_labels, fontsize=7)
    for i in range(len(result.cka_labels)):
        for j in range(len(result.cka_labels)):
            ax.text(j, i, f"{matrix[i, j]:.2f}", ha="center", va="center", fontsize=5, color="white")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def plot_loss_trace(trace_path, path):
    steps, totals = [], []
    components = {"l_scl": [], "l_kd": [], "l_kl": [], "l_ca": [], "l_mcls": []}
    with open(trace_path, "r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            steps.append(rec["step"])
            totals.append(rec["l_total"])
            for k in components:
                components[k].append(rec[k])
    if not steps:
        return False
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, totals, label="total", linewidth=1.5)
    for k, v in components.items():
        ax.plot(steps, v, label=k, linewidth=0.8, alpha=0.7)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


# ---------------------------------------------------------------------------
# entry points


def report_emit(results, out_dir, trace_path=None):
    """Write the delimited outputs, embedding export, and figures for one or
    more completed runs.  The first result is the primary method."""
    if not results:
        raise StateError("no completed runs to report")
    os.makedirs(out_dir, exist_ok=True)
    written = []

    for r in results:
        name = "results.json" if r.method == "full" else f"results_{_slug(r.method)}.json"
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(r.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path)

    table = os.path.join(out_dir, "table.csv")
    write_table_csv(results, table)
    written.append(table)

    primary = results[0]
    cka_path = os.path.join(out_dir, "cka.csv")
    if write_cka_csv(primary, cka_path):
        written.append(cka_path)
        heat = os.path.join(out_dir, "cka_heatmap.png")
        plot_cka_heatmap(primary, heat)
        written.append(heat)

    if write_embeddings(primary, os.path.join(out_dir, "embeddings.bin"), os.path.join(out_dir, "embeddings_manifest.json")):
        written.append(os.path.join(out_dir, "embeddings.bin"))
        written.append(os.path.join(out_dir, "embeddings_manifest.json"))

    curves = os.path.join(out_dir, "accuracy_curves.png")
    plot_accuracy_curves(results, curves)
    written.append(curves)

    if trace_path and os.path.exists(trace_path):
        loss_png = os.path.join(out_dir, "loss_trace.png")
        if plot_loss_trace(trace_path, loss_png):
            written.append(loss_png)
    return written


def _slug(method):
    return "".join(ch if ch.isalnum() else "_" for ch in method.lower()).strip("_")


def load_results(run_dir):
    """All results*.json in a run directory, the plain 'results.json' first."""
    names = sorted(n for n in os.listdir(run_dir) if n.startswith("results") and n.endswith(".json"))
    names.sort(key=lambda n: (n != "results.json", n))
    out = []
    for name in names:
        with open(os.path.join(run_dir, name), "r", encoding="utf-8") as fh:
            out.append(RunResult.from_dict(json.load(fh)))
    return out


def report_from_files(run_dir, out_dir):
    results = load_results(run_dir)
    if not results:
        raise StateError(f"no results*.json found in {run_dir}")
    trace = os.path.join(run_dir, "loss_trace.jsonl")
    return report_emit(results, out_dir, trace_path=trace if os.path.exists(trace) else None)
