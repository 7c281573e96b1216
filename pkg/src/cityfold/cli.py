"""Pipeline orchestration: synth -> ingest -> sample -> train -> encode
-> cluster / tsne -> group -> report.

Exit codes are a stable scripting contract: 0 success, 1 usage error,
2 data error, 3 numeric failure.
"""

from __future__ import annotations

import csv
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .analysis import (
    AnalysisError,
    cut_dendrogram,
    cut_to_k,
    pca_fit,
    pca_transform,
    tsne,
    ward_linkage,
)
from .citygml import CityGMLError, parse_citygml, write_citygml
from .foldnet import (
    ArchSpec,
    DESK_ARCH,
    NumericError,
    TrainConfig,
    checkpoint_load,
    checkpoint_save,
    encode,
    train,
)
from .foldnet.train import AdamState
from .geogroup import (
    Boundary,
    GeoEntity,
    GeoGroupError,
    GroupConfig,
    make_tiles,
    point_in_polygon,
    run_boundaries,
    tile_polygon,
)
from .meshops import (
    MeshError,
    NormalizationManifest,
    PointCloud,
    centroid_radius,
    normalize_cloud,
    percentile_filter,
    surface_sample,
    watertight_check,
)
from .objio import ObjError, export_obj, import_obj
from .report import render_run
from .stores import PipelineManifest, StoreError, read_cloud_store, read_embedding_store, \
    write_cloud_store, write_embedding_store
from .synthgen import SynthError, generate_dataset

DATA_ERRORS = (CityGMLError, ObjError, MeshError, StoreError, SynthError, GeoGroupError,
               FileNotFoundError)
NUMERIC_ERRORS = (NumericError, AnalysisError)


def _stage_seed(seed: int, salt: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(salt,)).generate_state(1)[0])


def _manifest(out_dir: Path) -> PipelineManifest:
    return PipelineManifest(out_dir / "manifest.json", __version__)


def _apply_config(ctx, config_path):
    """Config precedence: CLI flag > config file > built-in default."""
    if not config_path:
        return
    text = Path(config_path).read_text()
    if text.lstrip().startswith("{"):
        values = json.loads(text)
    else:
        values = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    for name, value in values.items():
        name = name.replace("-", "_")
        if name not in ctx.params:
            continue
        source = ctx.get_parameter_source(name)
        if source is not None and source.name == "COMMANDLINE":
            continue
        param = next(p for p in ctx.command.params if p.name == name)
        ctx.params[name] = param.type.convert(value, param, ctx)


@click.group()
@click.option("--quiet", is_flag=True, help="Suppress progress logging.")
@click.option("--verbose", is_flag=True, help="Chatty progress logging.")
@click.option("--threads", type=int, default=None, envvar="CITYFOLD_THREADS",
              help="Worker hint; outputs are independent of this value.")
@click.pass_context
def cli(ctx, quiet, verbose, threads):
    """Building-model latent grouping pipeline."""
    ctx.ensure_object(dict)
    ctx.obj["quiet"] = quiet
    ctx.obj["verbose"] = verbose


def _log(ctx, message):
    if not ctx.obj.get("quiet"):
        print(message, file=sys.stderr)


# ----------------------------------------------------------------- synth


@cli.command()
@click.option("--count", type=int, default=100, show_default=True)
@click.option("--mix", "mix_spec", default=None,
              help="Family weights, e.g. 'rect-flat:2,U-flat:1'.")
@click.option("--bbox", default="0,0,1000,1000", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["gml", "obj"]), default="gml",
              show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.pass_context
def synth(ctx, count, mix_spec, bbox, seed, fmt, out_dir, config_path):
    """Generate a labeled synthetic building dataset."""
    _apply_config(ctx, config_path)
    count, mix_spec, bbox, seed, fmt = (
        ctx.params["count"], ctx.params["mix_spec"], ctx.params["bbox"],
        ctx.params["seed"], ctx.params["fmt"],
    )
    start = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mix = None
    if mix_spec:
        mix = {}
        for item in mix_spec.split(","):
            family, _, weight = item.partition(":")
            mix[family.strip()] = float(weight) if weight else 1.0
    box = tuple(float(v) for v in bbox.split(","))
    records, labels = generate_dataset(count, mix, box, seed)

    outputs = []
    if fmt == "gml":
        gml_path = out / "synthetic.gml"
        gml_path.write_text(write_citygml(records))
        outputs.append(gml_path)
    else:
        mesh_dir = out / "meshes"
        mesh_dir.mkdir(exist_ok=True)
        for rec in records:
            path = mesh_dir / f"{rec.id}.obj"
            path.write_text(export_obj(rec.mesh))
            outputs.append(path)

    labels_path = out / "labels.csv"
    with open(labels_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(labels[0]))
        writer.writeheader()
        writer.writerows(labels)
    outputs.append(labels_path)

    _manifest(out).record_stage(
        "synth", dict(count=count, mix=mix, bbox=bbox, format=fmt), [],
        outputs, seed, time.time() - start, dict(buildings=len(records)),
    )
    _log(ctx, f"synth: wrote {len(records)} buildings to {out}")


# ---------------------------------------------------------------- ingest


@cli.command()
@click.argument("inputs", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.pass_context
def ingest(ctx, inputs, out_dir):
    """Parse CityGML/OBJ inputs, drop non-watertight buildings, report."""
    start = time.time()
    out = Path(out_dir)
    mesh_dir = out / "meshes"
    mesh_dir.mkdir(parents=True, exist_ok=True)

    records = []
    report_dict = dict(buildings_parsed=0, buildings_skipped=[], non_building_skipped=0,
                       srs_names=[], non_watertight=[])
    for path in inputs:
        path = Path(path)
        if path.suffix.lower() in (".gml", ".xml"):
            recs, report = parse_citygml(path.read_bytes())
            records.extend(recs)
            report_dict["buildings_parsed"] += report.buildings_parsed
            report_dict["buildings_skipped"] += [
                {"id": i, "reason": r} for i, r in report.buildings_skipped
            ]
            report_dict["non_building_skipped"] += report.non_building_skipped
            for srs in report.srs_names:
                if srs not in report_dict["srs_names"]:
                    report_dict["srs_names"].append(srs)
        elif path.suffix.lower() == ".obj":
            from .citygml import BuildingRecord, footprint_centroid

            mesh = import_obj(path.read_text())
            records.append(
                BuildingRecord(id=path.stem, mesh=mesh,
                               anchor_point=footprint_centroid(mesh))
            )
            report_dict["buildings_parsed"] += 1
        else:
            raise CityGMLError(f"unsupported input type: {path}")

    kept = []
    for rec in records:
        if watertight_check(rec.mesh).is_watertight:
            kept.append(rec)
        else:
            report_dict["non_watertight"].append(rec.id)

    rows = []
    outputs = []
    for rec in kept:
        obj_path = mesh_dir / f"{rec.id}.obj"
        obj_path.write_text(export_obj(rec.mesh))
        outputs.append(obj_path)
        rows.append(
            dict(building_id=rec.id, x=rec.anchor_point[0], y=rec.anchor_point[1],
                 roof_type=rec.roof_type or "", function=rec.function or "",
                 measured_height="" if rec.measured_height is None else rec.measured_height)
        )

    buildings_path = out / "buildings.csv"
    with open(buildings_path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["building_id", "x", "y", "roof_type", "function",
                            "measured_height"]
        )
        writer.writeheader()
        writer.writerows(rows)
    report_path = out / "parse_report.json"
    report_path.write_text(json.dumps(report_dict, indent=2))
    outputs += [buildings_path, report_path]

    _manifest(out).record_stage(
        "ingest", dict(inputs=[str(p) for p in inputs]), list(inputs), outputs, None,
        time.time() - start,
        dict(parsed=report_dict["buildings_parsed"], kept=len(kept),
             dropped_non_watertight=len(report_dict["non_watertight"])),
    )
    _log(ctx, f"ingest: kept {len(kept)} watertight buildings "
              f"({len(report_dict['non_watertight'])} dropped)")


# ---------------------------------------------------------------- sample


@cli.command()
@click.option("--meshes", "mesh_source", type=click.Path(exists=True), required=True,
              help="Ingest output directory (with meshes/ and buildings.csv).")
@click.option("--points", type=int, default=2048, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--split", default=None, help="Train:test ratio, e.g. 3:1.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.pass_context
def sample(ctx, mesh_source, points, seed, split, out_dir, config_path):
    """Sample meshes to fixed-size clouds, percentile-filter, normalize."""
    _apply_config(ctx, config_path)
    points, seed, split = ctx.params["points"], ctx.params["seed"], ctx.params["split"]
    start = time.time()
    source = Path(mesh_source)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(source / "buildings.csv", newline="") as fh:
        building_ids = [row["building_id"] for row in csv.DictReader(fh)]
    if not building_ids:
        raise MeshError("no buildings to sample")

    clouds, radii = [], []
    for i, bid in enumerate(building_ids):
        mesh = import_obj((source / "meshes" / f"{bid}.obj").read_text())
        cloud = surface_sample(mesh, points, _stage_seed(seed, 3000 + i))
        clouds.append(cloud.points)
        radii.append(centroid_radius(cloud)[1])

    keep, norm_manifest = percentile_filter(radii)
    kept_ids = [bid for bid, k in zip(building_ids, keep) if k]
    normalized = np.stack([
        normalize_cloud(PointCloud(c, bid), norm_manifest).points
        for c, bid, k in zip(clouds, building_ids, keep) if k
    ])

    cloud_path = out / "clouds.bpcl"
    write_cloud_store(cloud_path, normalized, kept_ids)
    norm_path = out / "normalization.json"
    norm_path.write_text(json.dumps(norm_manifest.to_dict(), indent=2))
    outputs = [cloud_path, norm_path]

    if split:
        train_part, test_part = (int(v) for v in split.split(":"))
        rng = np.random.Generator(np.random.PCG64(_stage_seed(seed, 3999)))
        order = rng.permutation(len(kept_ids))
        n_train = round(len(kept_ids) * train_part / (train_part + test_part))
        split_path = out / "split.json"
        split_path.write_text(json.dumps(dict(
            train=[kept_ids[i] for i in sorted(order[:n_train])],
            test=[kept_ids[i] for i in sorted(order[n_train:])],
        )))
        outputs.append(split_path)

    _manifest(out).record_stage(
        "sample", dict(points=points, split=split), [source / "buildings.csv"],
        outputs, seed, time.time() - start,
        dict(sampled=len(building_ids), kept=len(kept_ids),
             dropped=int(norm_manifest.dropped_count)),
    )
    _log(ctx, f"sample: {len(kept_ids)}/{len(building_ids)} clouds kept")


# ----------------------------------------------------------------- train


def _preset_config(preset, codeword_dim, epochs, lr, batch, seed, k_neighbors,
                   grid_side, checkpoint_every):
    if preset == "desk":
        arch = ArchSpec(
            codeword_dim=codeword_dim or DESK_ARCH.codeword_dim,
            k_neighbors=k_neighbors or DESK_ARCH.k_neighbors,
            grid_side=grid_side or DESK_ARCH.grid_side,
            point_widths=DESK_ARCH.point_widths,
            graph1_width=DESK_ARCH.graph1_width,
            graph2_width=DESK_ARCH.graph2_width,
            head_hidden=DESK_ARCH.head_hidden,
            fold_hidden=DESK_ARCH.fold_hidden,
        )
        return TrainConfig(
            epochs=200 if epochs is None else epochs,
            learning_rate=lr or 1e-3,
            batch_size=batch or 8,
            codeword_dim=arch.codeword_dim,
            k_neighbors=arch.k_neighbors,
            grid_side=arch.grid_side,
            seed=seed,
            checkpoint_every=checkpoint_every or 50,
            arch=arch,
        )
    return TrainConfig(
        epochs=800 if epochs is None else epochs,
        learning_rate=lr or 1e-4,
        batch_size=batch or 16,
        codeword_dim=codeword_dim or 512,
        k_neighbors=k_neighbors or 16,
        grid_side=grid_side or 45,
        seed=seed,
        checkpoint_every=checkpoint_every or 50,
    )


@cli.command("train")
@click.option("--clouds", "cloud_path", type=click.Path(exists=True), required=True)
@click.option("--preset", type=click.Choice(["desk", "paper"]), default="desk",
              show_default=True)
@click.option("--codeword-dim", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--batch", type=int, default=None)
@click.option("--k-neighbors", type=int, default=None)
@click.option("--grid-side", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--checkpoint-every", type=int, default=None)
@click.option("--resume", "resume_path", type=click.Path(exists=True), default=None)
@click.option("--split-file", type=click.Path(exists=True), default=None)
@click.option("--subset", type=click.Choice(["train", "test", "all"]), default="all")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.pass_context
def train_cmd(ctx, cloud_path, preset, codeword_dim, epochs, lr, batch, k_neighbors,
              grid_side, seed, checkpoint_every, resume_path, split_file, subset,
              out_dir, config_path):
    """Train the autoencoder; writes checkpoints and the loss CSV."""
    _apply_config(ctx, config_path)
    p = ctx.params
    start = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    clouds, ids = read_cloud_store(cloud_path)
    if split_file and p["subset"] != "all":
        wanted = set(json.loads(Path(split_file).read_text())[p["subset"]])
        mask = [i for i, bid in enumerate(ids) if bid in wanted]
        clouds = clouds[mask]

    start_epoch = 0
    initial = None
    if resume_path:
        params, state, config, start_epoch = checkpoint_load(resume_path)
        if p["epochs"] is not None:
            config.epochs = p["epochs"]
        initial = (params, state)
    else:
        config = _preset_config(p["preset"], p["codeword_dim"], p["epochs"], p["lr"],
                                p["batch"], p["seed"], p["k_neighbors"], p["grid_side"],
                                p["checkpoint_every"])

    def log(epoch, loss):
        if ctx.obj.get("verbose"):
            print(f"epoch {epoch}: loss {loss:.6f}", file=sys.stderr)

    params, state, curve = train(clouds, config, checkpoint_dir=out / "checkpoints",
                                 initial=initial, start_epoch=start_epoch, log=log)

    ckpt_path = out / "checkpoint.ckpt"
    checkpoint_save(ckpt_path, params, state, config, epoch=config.epochs)
    loss_path = out / "loss.csv"
    exists = loss_path.exists() and resume_path
    with open(loss_path, "a" if exists else "w", newline="") as fh:
        writer = csv.writer(fh)
        if not exists:
            writer.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(curve):
            writer.writerow([start_epoch + i + 1, repr(loss)])

    _manifest(out).record_stage(
        "train", config.to_dict(), [cloud_path], [ckpt_path, loss_path],
        config.seed, time.time() - start,
        dict(clouds=len(clouds), epochs_run=len(curve)),
    )
    _log(ctx, f"train: {len(curve)} epochs, final loss "
              f"{curve[-1]:.6f}" if curve else "train: no epochs run")


# ---------------------------------------------------------------- encode


@cli.command("encode")
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--clouds", "cloud_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.pass_context
def encode_cmd(ctx, ckpt_path, cloud_path, out_path):
    """Encode every cloud in the store to its codeword."""
    start = time.time()
    params, _, _, _ = checkpoint_load(ckpt_path)
    clouds, ids = read_cloud_store(cloud_path)
    codes = np.stack([encode(params, c) for c in clouds])
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_embedding_store(out_path, codes, ids)
    _manifest(out_path.parent).record_stage(
        "encode", dict(checkpoint=str(ckpt_path)), [ckpt_path, cloud_path],
        [out_path], None, time.time() - start, dict(embeddings=len(ids)),
    )
    _log(ctx, f"encode: {len(ids)} embeddings of dim {codes.shape[1]}")


# --------------------------------------------------------------- cluster


@cli.command()
@click.option("--embeddings", "emb_path", type=click.Path(exists=True), required=True)
@click.option("--pca", "pca_dims", type=int, default=15, show_default=True)
@click.option("--cut", "cut_distance", type=float, default=None)
@click.option("--k", "k_clusters", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.pass_context
def cluster(ctx, emb_path, pca_dims, cut_distance, k_clusters, out_dir):
    """PCA-reduce embeddings, Ward-cluster, and cut the dendrogram."""
    if cut_distance is None and k_clusters is None:
        raise click.UsageError("give either --cut or --k")
    start = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    embeddings, ids = read_embedding_store(emb_path)

    q = min(pca_dims, embeddings.shape[1])
    reduced = pca_transform(pca_fit(embeddings, q), embeddings)
    dendrogram = ward_linkage(reduced)
    labels = (
        cut_to_k(dendrogram, k_clusters)
        if k_clusters is not None
        else cut_dendrogram(dendrogram, cut_distance)
    )

    linkage_path = out / "linkage.csv"
    with open(linkage_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster_a", "cluster_b", "distance", "size"])
        for a, b, dist, size in dendrogram.merges:
            writer.writerow([int(a), int(b), repr(float(dist)), int(size)])
    labels_path = out / "cluster_labels.csv"
    with open(labels_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["building_id", "cluster"])
        for bid, label in zip(ids, labels):
            writer.writerow([bid, int(label)])

    _manifest(out).record_stage(
        "cluster", dict(pca=q, cut=cut_distance, k=k_clusters), [emb_path],
        [linkage_path, labels_path], None, time.time() - start,
        dict(points=len(ids), clusters=int(labels.max()) + 1),
    )
    _log(ctx, f"cluster: {int(labels.max()) + 1} clusters over {len(ids)} buildings")


@cli.command("tsne")
@click.option("--embeddings", "emb_path", type=click.Path(exists=True), required=True)
@click.option("--perplexity", type=float, default=80.0, show_default=True)
@click.option("--iters", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.pass_context
def tsne_cmd(ctx, emb_path, perplexity, iters, seed, out_dir):
    """Project embeddings to 2D with exact t-SNE."""
    start = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    embeddings, ids = read_embedding_store(emb_path)
    coords = tsne(embeddings, perplexity=perplexity, iterations=iters, seed=seed)
    tsne_path = out / "tsne.csv"
    with open(tsne_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["building_id", "x", "y"])
        for bid, (x, y) in zip(ids, coords):
            writer.writerow([bid, repr(float(x)), repr(float(y))])
    _manifest(out).record_stage(
        "tsne", dict(perplexity=perplexity, iters=iters), [emb_path], [tsne_path],
        seed, time.time() - start, dict(points=len(ids)),
    )
    _log(ctx, f"tsne: projected {len(ids)} embeddings")


# ----------------------------------------------------------------- group


def _load_entities(path):
    entities = []
    boundary_of = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            entities.append(
                GeoEntity(row["building_id"], (float(row["x"]), float(row["y"])), -1)
            )
            if row.get("boundary_id"):
                boundary_of[row["building_id"]] = row["boundary_id"]
    return entities, boundary_of


@cli.command()
@click.option("--embeddings", "emb_path", type=click.Path(exists=True), required=True)
@click.option("--entities", "entities_path", type=click.Path(exists=True), required=True)
@click.option("--tau", type=float, default=0.03, show_default=True)
@click.option("--tau-sweep", is_flag=True, help="Sweep tau over 0.01..0.05.")
@click.option("--boundaries", "boundaries_path", type=click.Path(exists=True), default=None)
@click.option("--tiles", "tile_size", type=float, default=None,
              help="Tile the bounding box at this size (metres).")
@click.option("--coordinate-median", is_flag=True,
              help="Anchor at the coordinate-wise median instead of the geometric median.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.pass_context
def group(ctx, emb_path, entities_path, tau, tau_sweep, boundaries_path, tile_size,
          coordinate_median, out_dir):
    """Geospatially group buildings by latent similarity per boundary."""
    start = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    embeddings, ids = read_embedding_store(emb_path)
    row_of = {bid: i for i, bid in enumerate(ids)}

    entities, boundary_of = _load_entities(entities_path)
    # buildings filtered out upstream have no embedding; drop them here
    missing = [e.building_id for e in entities if e.building_id not in row_of]
    if missing:
        _log(ctx, f"group: dropping {len(missing)} buildings without embeddings")
    entities = [
        GeoEntity(e.building_id, e.location, row_of[e.building_id])
        for e in entities
        if e.building_id in row_of
    ]

    origin = None
    if tile_size is not None:
        xy = np.asarray([e.location for e in entities])
        origin = tuple(xy.min(axis=0))
        boundaries = make_tiles(entities, tile_size, origin)
    elif boundaries_path is not None:
        geo = json.loads(Path(boundaries_path).read_text())
        boundaries = []
        rings = {}
        for feature in geo["features"]:
            bid = str(feature["properties"]["boundary_id"])
            rings[bid] = feature["geometry"]["coordinates"][0]
            boundaries.append(Boundary(bid, "administrative", []))
        for entity in entities:
            for boundary in boundaries:
                if point_in_polygon(entity.location, rings[boundary.boundary_id]):
                    boundary.members.append(entity)
                    break
    elif boundary_of:
        grouped: dict[str, Boundary] = {}
        for entity in entities:
            bid = boundary_of.get(entity.building_id, "default")
            grouped.setdefault(bid, Boundary(bid, "administrative", [])).members.append(entity)
        boundaries = [grouped[k] for k in sorted(grouped)]
    else:
        boundaries = [Boundary("all", "administrative", list(entities))]

    taus = GroupConfig().sweep if tau_sweep else (tau,)
    outputs = []
    all_results = {}
    for t in taus:
        results, summary, diagnostics = run_boundaries(
            boundaries, embeddings, GroupConfig(tau=t),
            use_coordinatewise_median=coordinate_median,
        )
        all_results[t] = (results, summary)
        suffix = f"_tau{t:g}" if tau_sweep else ""
        assignment_path = out / f"assignment{suffix}.csv"
        with open(assignment_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["building_id", "boundary_id", "group"])
            for boundary in boundaries:
                result = results.get(boundary.boundary_id)
                if result is None:
                    continue
                for member in boundary.members:
                    writer.writerow([member.building_id, boundary.boundary_id,
                                     result.assignment[member.building_id]])
        summary_path = out / f"summary{suffix}.csv"
        with open(summary_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["boundary_id", "count", "groups",
                                                    "k_ratio"])
            writer.writeheader()
            writer.writerows(summary)
        outputs += [assignment_path, summary_path]
        for boundary_id, reason in diagnostics:
            _log(ctx, f"group: skipped boundary {boundary_id}: {reason}")

    # GeoJSON for the primary tau
    results, summary = all_results[taus[-1] if not tau_sweep else tau]
    if tau_sweep and tau not in all_results:
        results, summary = all_results[taus[0]]
    features = []
    for row in summary:
        if tile_size is not None:
            ring = tile_polygon(row["boundary_id"], tile_size, origin)
        elif boundaries_path is not None:
            ring = rings[row["boundary_id"]]
        else:
            members = next(b for b in boundaries if b.boundary_id == row["boundary_id"]).members
            xy = np.asarray([m.location for m in members])
            x0, y0 = xy.min(axis=0)
            x1, y1 = xy.max(axis=0)
            ring = [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]
        features.append(dict(
            type="Feature",
            geometry=dict(type="Polygon", coordinates=[[list(map(float, p)) for p in ring]]),
            properties=dict(boundary_id=row["boundary_id"], count=row["count"],
                            groups=row["groups"], k_ratio=row["k_ratio"]),
        ))
    boundaries_geojson = out / "boundaries.geojson"
    boundaries_geojson.write_text(json.dumps(dict(type="FeatureCollection",
                                                  features=features)))
    point_features = []
    for boundary in boundaries:
        result = results.get(boundary.boundary_id)
        if result is None:
            continue
        for member in boundary.members:
            point_features.append(dict(
                type="Feature",
                geometry=dict(type="Point", coordinates=[float(member.location[0]),
                                                         float(member.location[1])]),
                properties=dict(building_id=member.building_id,
                                boundary_id=boundary.boundary_id,
                                group=result.assignment[member.building_id]),
            ))
    points_geojson = out / "group_points.geojson"
    points_geojson.write_text(json.dumps(dict(type="FeatureCollection",
                                              features=point_features)))
    outputs += [boundaries_geojson, points_geojson]

    _manifest(out).record_stage(
        "group", dict(tau=tau, sweep=tau_sweep, tiles=tile_size),
        [emb_path, entities_path], outputs, None, time.time() - start,
        dict(boundaries=len(boundaries)),
    )
    _log(ctx, f"group: processed {len(boundaries)} boundaries")


# ---------------------------------------------------------------- report


@cli.command("report")
@click.option("--run", "run_dir", type=click.Path(exists=True), required=True,
              help="Directory holding pipeline outputs (loss.csv, linkage.csv, ...).")
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.pass_context
def report_cmd(ctx, run_dir, out_dir):
    """Render figures for whatever artifacts the run directory holds."""
    start = time.time()
    written = render_run(run_dir, out_dir)
    if not written:
        raise CityGMLError(f"no renderable artifacts found in {run_dir}")
    _manifest(Path(run_dir)).record_stage(
        "report", dict(), [run_dir], written, None, time.time() - start,
        dict(figures=len(written)),
    )
    for path in written:
        _log(ctx, f"report: wrote {path}")


def main():
    try:
        cli.main(standalone_mode=False)
        return 0
    except click.UsageError as exc:
        print(f"usage error: {exc.format_message()}", file=sys.stderr)
        return 1
    except click.exceptions.Abort:
        return 1
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
