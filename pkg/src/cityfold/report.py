"""Render run artifacts (loss curves, cluster structure, t-SNE spread,
k-ratio maps) to PNG figures next to the delimited outputs."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path):
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return Path(path)


def plot_loss_curve(loss_csv, out_path):
    epochs, losses = [], []
    with open(loss_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            epochs.append(int(row["epoch"]))
            losses.append(float(row["mean_loss"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, losses, lw=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean reconstruction loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    return _save(fig, out_path)


def plot_cluster_counts(linkage_csv, out_path):
    distances = []
    with open(linkage_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            distances.append(float(row["distance"]))
    distances = np.asarray(distances)
    n = len(distances) + 1
    grid = np.linspace(0, distances.max() * 1.05 if len(distances) else 1.0, 200)
    counts = [n - int((distances <= d).sum()) for d in grid]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.step(grid, counts, where="post")
    ax.set_xlabel("cutoff distance")
    ax.set_ylabel("cluster count")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    return _save(fig, out_path)


def plot_tsne(tsne_csv, out_path, labels_csv=None):
    xs, ys, ids = [], [], []
    with open(tsne_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            ids.append(row["building_id"])
            xs.append(float(row["x"]))
            ys.append(float(row["y"]))
    colors = None
    if labels_csv is not None and Path(labels_csv).exists():
        label_of = {}
        with open(labels_csv, newline="") as fh:
            for row in csv.DictReader(fh):
                label_of[row["building_id"]] = int(row["cluster"])
        colors = [label_of.get(i, -1) for i in ids]
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.scatter(xs, ys, s=6, c=colors, cmap="tab10", linewidths=0)
    ax.set_xlabel("t-SNE 1")
    ax.set_ylabel("t-SNE 2")
    ax.set_aspect("equal")
    return _save(fig, out_path)


def plot_kratio_map(boundaries_geojson, out_path):
    data = json.loads(Path(boundaries_geojson).read_text())
    fig, ax = plt.subplots(figsize=(7, 6))
    values = [f["properties"].get("k_ratio", 0.0) for f in data["features"]]
    vmax = max(values) if values else 1.0
    cmap = plt.get_cmap("viridis")
    for feature in data["features"]:
        ring = np.asarray(feature["geometry"]["coordinates"][0])
        k = feature["properties"].get("k_ratio", 0.0)
        ax.fill(ring[:, 0], ring[:, 1], color=cmap(k / vmax if vmax else 0.0),
                ec="black", lw=0.3)
    sm = plt.cm.ScalarMappable(cmap=cmap, norm=plt.Normalize(0, vmax))
    fig.colorbar(sm, ax=ax, label="k ratio (buildings per group)")
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    return _save(fig, out_path)


def plot_group_points(points_geojson, out_path):
    data = json.loads(Path(points_geojson).read_text())
    xs, ys, groups = [], [], []
    for feature in data["features"]:
        x, y = feature["geometry"]["coordinates"]
        xs.append(x)
        ys.append(y)
        groups.append(feature["properties"].get("group", 0))
    fig, ax = plt.subplots(figsize=(7, 6))
    ax.scatter(xs, ys, s=8, c=groups, cmap="tab20", linewidths=0)
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    return _save(fig, out_path)


def render_run(run_dir, out_dir=None) -> list[Path]:
    """Render every figure for which the run directory has inputs."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir / "figures"
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    jobs = [
        ("loss.csv", plot_loss_curve, "loss_curve.png", None),
        ("linkage.csv", plot_cluster_counts, "cluster_counts.png", None),
        ("tsne.csv", plot_tsne, "tsne.png", "cluster_labels.csv"),
        ("boundaries.geojson", plot_kratio_map, "kratio_map.png", None),
        ("group_points.geojson", plot_group_points, "group_points.png", None),
    ]
    for src, fn, dst, extra in jobs:
        src_path = run_dir / src
        if not src_path.exists():
            continue
        if extra is not None:
            written.append(fn(src_path, out_dir / dst, run_dir / extra))
        else:
            written.append(fn(src_path, out_dir / dst))
    return written
