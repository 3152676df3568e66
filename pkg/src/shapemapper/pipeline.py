"""Pipeline stages over a run directory of plain files.

Every stage reads its inputs from the run directory, checks them against the
hashes recorded by the stage that produced them, and writes its outputs
through :func:`commit`, which refuses to replace a differing file unless
``force`` is set.  Identical config and inputs give byte-identical outputs.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import tempfile
import time
import zlib
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import compressor, decoder, features, mapper, mesher, metrics, render, shapes, store

log = logging.getLogger(__name__)

CONFIG_ENV = "SHAPEMAPPER_CONFIG"
MANIFEST_NAME = "run_manifest.json"
SPLITS = ("train", "val", "test")


class PipelineError(RuntimeError):
    """A stage cannot run: missing or stale inputs, or a protected output."""


# --------------------------------------------------------------------------
# config
# --------------------------------------------------------------------------

@dataclass
class PipelineConfig:
    seed: int = 0
    manifest: str = ""  # empty: the shipped 16-shape roster
    # decoder
    latent_dim: int = 32
    decoder_width: int = 128
    decoder_layers: int = 4
    n_uniform: int = 1000
    n_surface: int = 1000
    decoder_epochs: int = 100
    decoder_batch: int = 1024
    grid_res: int = 64
    # views and features
    image_size: int = 112
    n_augment: int = 8
    patch: int = 8
    scales: int = 4
    K: int = 20
    image_sample: int = 500
    keep_frac: float = 0.2
    kmeans_epochs: int = 50
    embed_dim: int = 512
    # autoencoder
    bottleneck_dim: int = 32
    ae_epochs: int = 100
    ae_batch: int = 32
    # mapper
    mapper_max_epochs: int = 1000
    patience: int = 5
    val_frac: float = 0.1
    mapper_batch: int = 32
    # splits and evaluation
    split_train: float = 0.8
    split_val: float = 0.1
    split_test: float = 0.1
    eval_points: int = 1024

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.type in ("int", int) and f.name != "seed" and v <= 0:
                raise ValueError(f"config {f.name} must be positive, got {v}")
        splits = (self.split_train, self.split_val, self.split_test)
        if min(splits) < 0 or abs(sum(splits) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be nonnegative and sum to 1, got {splits}")
        if not 0 < self.keep_frac <= 1 or not 0 < self.val_frac < 1:
            raise ValueError("keep_frac must be in (0, 1] and val_frac in (0, 1)")
        if self.grid_res < 2:
            raise ValueError("grid_res must be at least 2")
        if self.image_size % self.patch:
            raise ValueError(f"image_size {self.image_size} is not a multiple of patch {self.patch}")

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def parse_config(text: str, **overrides) -> PipelineConfig:
    """``key=value`` lines; ``#`` comments and blank lines are ignored."""
    kinds = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        kind = kinds[key]
        try:
            values[key] = int(val) if kind in ("int", int) else float(val) if kind in ("float", float) else val
        except ValueError:
            raise ValueError(f"config line {lineno}: {key} expects {kind}, got {val!r}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**values)


def load_config(path=None, **overrides) -> PipelineConfig:
    """Config from ``path``, else from ``$SHAPEMAPPER_CONFIG``, else defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return parse_config("", **overrides)
    p = Path(path)
    if not p.is_file():
        raise PipelineError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"), **overrides)


# --------------------------------------------------------------------------
# artifacts and the run manifest
# --------------------------------------------------------------------------

def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@contextmanager
def commit(path, force: bool = False):
    """Yield a temporary path to write; move it to ``path`` on success.

    An existing ``path`` with different content is an error unless ``force``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
    os.close(fd)
    try:
        yield tmp
        if path.exists() and not force and file_hash(path) != file_hash(tmp):
            raise PipelineError(f"refusing to overwrite {path}: content differs (use --force)")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def commit_bytes(path, data: bytes, force: bool = False) -> None:
    with commit(path, force) as tmp:
        Path(tmp).write_bytes(data)


def commit_text(path, text: str, force: bool = False) -> None:
    commit_bytes(path, text.encode("utf-8"), force)


class RunManifest:
    """``run_manifest.json``: config hash plus per-stage output hashes."""

    def __init__(self, run_dir):
        self.run_dir = Path(run_dir)
        self.path = self.run_dir / MANIFEST_NAME
        if self.path.exists():
            self.data = json.loads(self.path.read_text(encoding="utf-8"))
        else:
            self.data = {"config_hash": None, "stages": {}}

    def record(self, stage: str, cfg: PipelineConfig, outputs) -> None:
        if self.data["config_hash"] not in (None, cfg.digest()):
            log.warning("config changed since the last stage in %s", self.run_dir)
        self.data["config_hash"] = cfg.digest()
        entry = {}
        for p in outputs:
            p = Path(p)
            if not p.exists():
                raise PipelineError(f"stage {stage} did not produce {p}")
            entry[p.relative_to(self.run_dir).as_posix()] = file_hash(p)
        self.data["stages"][stage] = {
            "outputs": dict(sorted(entry.items())),
            "recorded": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def require(self, stage: str, needed_by: str) -> dict:
        """Check a finished upstream stage; returns its outputs (relative path -> hash)."""
        entry = self.data["stages"].get(stage)
        if entry is None:
            raise PipelineError(f"{needed_by} needs the outputs of {stage}; run `shapemapper {stage}` first")
        for rel, digest in entry["outputs"].items():
            p = self.run_dir / rel
            if not p.exists():
                raise PipelineError(f"{needed_by}: {stage} output {p} is missing; rerun `shapemapper {stage}`")
            if file_hash(p) != digest:
                raise PipelineError(f"{needed_by}: {p} changed since {stage} wrote it; rerun `shapemapper {stage}`")
        return entry["outputs"]


# --------------------------------------------------------------------------
# shared helpers
# --------------------------------------------------------------------------

def load_roster(cfg: PipelineConfig):
    if cfg.manifest:
        p = Path(cfg.manifest)
        if not p.is_file():
            raise PipelineError(f"shape manifest not found: {p}")
        roster = shapes.load_manifest(p)
    else:
        roster = shapes.benchmark_shapes()
    if not roster:
        raise PipelineError("shape manifest lists no shapes")
    return roster


def split_shapes(ids, cfg: PipelineConfig) -> dict:
    """Seeded 80/10/10 style split of shape ids; returns ``{shape_id: split}``."""
    n = len(ids)
    order = np.random.default_rng([cfg.seed, 0x5EED]).permutation(n)
    n_train = int(round(cfg.split_train * n))
    n_val = int(round(cfg.split_val * n))
    n_train = max(1, min(n_train, n))
    n_val = min(n_val, n - n_train)
    out = {}
    for rank, k in enumerate(order):
        out[ids[k]] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return {sid: out[sid] for sid in ids}


def read_splits(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            sid, split = line.split()
            out[sid] = split
    return out


def camera(cfg: PipelineConfig) -> render.Camera:
    return render.Camera(width=cfg.image_size, height=cfg.image_size)


def augment_seed(cfg: PipelineConfig, shape_id: str, angle: float, k: int, purpose: int = 1):
    return [cfg.seed, purpose, zlib.crc32(shape_id.encode()), int(round(angle)), k]


def decoder_config(cfg: PipelineConfig) -> decoder.AutoDecoderConfig:
    return decoder.AutoDecoderConfig(
        latent_dim=cfg.latent_dim,
        hidden=(cfg.decoder_width,) * cfg.decoder_layers,
        epochs=cfg.decoder_epochs,
        batch_size=cfg.decoder_batch,
        seed=cfg.seed,
    )


class Featurizer:
    """Image -> combined feature, given a codebook and (optionally) an autoencoder."""

    def __init__(self, cfg: PipelineConfig, codebook: features.Codebook, ae=None):
        self.cfg = cfg
        self.codebook = codebook
        self.ae = ae

    def bag(self, image) -> np.ndarray:
        d = features.extract_patch_descriptors(image, self.cfg.patch, self.cfg.scales)
        return features.bag_of_descriptors(d, self.codebook).z_vit

    def embed(self, image) -> np.ndarray:
        return features.global_embed(image, self.cfg.embed_dim)

    def combined(self, image) -> mapper.CombinedFeature:
        return mapper.concat_features(compressor.compress(self.ae, self.bag(image)), self.embed(image))


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

def stage_train_decoder(cfg: PipelineConfig, run_dir, force: bool = False) -> dict:
    """Auto-decoder on the whole roster; writes the decoder, the latent store,
    the shape split and the loss history."""
    run = Path(run_dir)
    roster = load_roster(cfg)
    ids = [sid for sid, _ in roster]
    data = shapes.make_dataset(roster, cfg.n_uniform, cfg.n_surface, seed=cfg.seed)
    result = decoder.train_autodecoder(data, decoder_config(cfg))
    splits = split_shapes(ids, cfg)

    outputs = {
        "decoder": run / "decoder.dnet",
        "latents": run / "latents.lats",
        "splits": run / "splits.txt",
        "history": run / "decoder_history.csv",
    }
    commit_bytes(outputs["decoder"], result.model.net.to_bytes(), force)
    vecs = np.array([result.latents[sid].c for sid in ids])
    commit_bytes(outputs["latents"], store.vectors_to_bytes(ids, vecs, store.LATENT_MAGIC), force)
    commit_text(outputs["splits"], "".join(f"{sid} {splits[sid]}\n" for sid in ids), force)
    commit_text(
        outputs["history"],
        "epoch,l1\n" + "".join(f"{k + 1},{v:.9g}\n" for k, v in enumerate(result.history)),
        force,
    )
    RunManifest(run).record("train-decoder", cfg, outputs.values())
    return {"result": result, "roster": roster, "outputs": outputs}


def stage_render_dataset(cfg: PipelineConfig, run_dir, force: bool = False) -> dict:
    """Nine analytic renders per shape plus ``views/index.txt``."""
    run = Path(run_dir)
    roster = load_roster(cfg)
    cam = camera(cfg)
    written = []
    lines = []
    for sid, shape in roster:
        for view in render.render_views(shape.sdf, cam, sid):
            name = render.view_filename(sid, view.angle)
            with commit(run / "views" / name, force) as tmp:
                render.write_pgm(view, tmp)
            written.append(run / "views" / name)
            lines.append(f"{name} {sid} {int(round(view.angle))}\n")
    index = run / "views" / "index.txt"
    commit_text(index, "".join(lines), force)
    RunManifest(run).record("render-dataset", cfg, [index, *written])
    return {"index": index, "files": written}


def read_view_index(run_dir) -> list[tuple[str, str, int]]:
    run = Path(run_dir)
    rows = []
    for line in (run / "views" / "index.txt").read_text(encoding="utf-8").splitlines():
        if line.strip():
            name, sid, angle = line.split()
            rows.append((name, sid, int(angle)))
    return rows


def training_images(cfg: PipelineConfig, run_dir, splits: dict):
    """``(image_id, shape_id, split, pixels)`` for every stored view plus
    ``n_augment`` augmented copies of each training-split view."""
    run = Path(run_dir)
    out = []
    for name, sid, angle in read_view_index(run):
        px = render.read_pgm(run / "views" / name)
        split = splits[sid]
        stem = name[: -len(".pgm")]
        out.append((stem, sid, split, px))
        if split == "train":
            base = render.ViewImage(px, angle, sid)
            for k in range(cfg.n_augment):
                aug = render.augment(base, seed=augment_seed(cfg, sid, angle, k))
                out.append((f"{stem}_aug{k}", sid, split, aug.pixels))
    return out


def stage_features(cfg: PipelineConfig, run_dir, force: bool = False) -> dict:
    """Codebook from training images; bag features and global embeddings for all images."""
    run = Path(run_dir)
    manifest = RunManifest(run)
    manifest.require("train-decoder", "features")
    manifest.require("render-dataset", "features")
    splits = read_splits(run / "splits.txt")
    images = training_images(cfg, run, splits)
    train_px = [px for _, _, split, px in images if split == "train"]
    codebook = features.fit_codebook(
        train_px,
        K=cfg.K,
        image_sample=cfg.image_sample,
        keep_frac=cfg.keep_frac,
        seed=cfg.seed,
        patch=cfg.patch,
        scales=cfg.scales,
        epochs=cfg.kmeans_epochs,
    )
    feat = Featurizer(cfg, codebook)
    ids = [i for i, _, _, _ in images]
    bags = np.array([feat.bag(px) for _, _, _, px in images])
    embeds = np.array([feat.embed(px) for _, _, _, px in images])

    outputs = {
        "codebook": run / "codebook.vecs",
        "bags": run / "bags.vecs",
        "embeds": run / "embeds.vecs",
        "index": run / "features_index.txt",
    }
    commit_bytes(outputs["codebook"], store.vectors_to_bytes([f"c{k}" for k in range(codebook.K)], codebook.centroids), force)
    commit_bytes(outputs["bags"], store.vectors_to_bytes(ids, bags), force)
    commit_bytes(outputs["embeds"], store.vectors_to_bytes(ids, embeds), force)
    commit_text(outputs["index"], "".join(f"{i} {sid} {split}\n" for i, sid, split, _ in images), force)
    manifest.record("features", cfg, outputs.values())
    return {"codebook": codebook, "outputs": outputs}


def read_features_index(run_dir) -> list[tuple[str, str, str]]:
    rows = []
    for line in (Path(run_dir) / "features_index.txt").read_text(encoding="utf-8").splitlines():
        if line.strip():
            rows.append(tuple(line.split()))
    return rows


def stage_train_ae(cfg: PipelineConfig, run_dir, force: bool = False) -> dict:
    run = Path(run_dir)
    manifest = RunManifest(run)
    manifest.require("features", "train-ae")
    ids, bags = store.read_vectors(run / "bags.vecs", store.VECTOR_MAGIC)
    split_of = {i: split for i, _, split in read_features_index(run)}
    train = np.array([b for i, b in zip(ids, bags) if split_of[i] == "train"])
    result = compressor.train_autoencoder(
        train, epochs=cfg.ae_epochs, seed=cfg.seed, bottleneck=cfg.bottleneck_dim, batch_size=cfg.ae_batch
    )
    outputs = {"ae": run / "autoencoder.aenc", "history": run / "ae_history.csv"}
    commit_bytes(outputs["ae"], result.model.to_bytes(), force)
    commit_text(
        outputs["history"],
        "epoch,l2\n" + "".join(f"{k + 1},{v:.9g}\n" for k, v in enumerate(result.history)),
        force,
    )
    manifest.record("train-ae", cfg, outputs.values())
    return {"result": result, "outputs": outputs}


def build_pairs(run_dir) -> list[mapper.TrainingPair]:
    """One pair per stored image: combined feature -> its shape's latent, tagged with the shape's split."""
    run = Path(run_dir)
    ae = compressor.AutoencoderModel.load(run / "autoencoder.aenc")
    ids, bags = store.read_vectors(run / "bags.vecs", store.VECTOR_MAGIC)
    eids, embeds = store.read_vectors(run / "embeds.vecs", store.VECTOR_MAGIC)
    if ids != eids:
        raise PipelineError("bags.vecs and embeds.vecs list different images")
    lat_ids, lats = store.read_latents(run / "latents.lats")
    latent = {sid: decoder.LatentCode(c, sid) for sid, c in zip(lat_ids, lats)}
    meta = {i: (sid, split) for i, sid, split in read_features_index(run)}
    z_bar = compressor.compress(ae, bags)
    pairs = []
    for i, zb, zc in zip(ids, z_bar, embeds):
        sid, split = meta[i]
        pairs.append(mapper.TrainingPair(mapper.concat_features(zb, zc), latent[sid], split, i))
    return pairs


def stage_train_mapper(cfg: PipelineConfig, run_dir, force: bool = False) -> dict:
    run = Path(run_dir)
    manifest = RunManifest(run)
    manifest.require("train-decoder", "train-mapper")
    manifest.require("features", "train-mapper")
    manifest.require("train-ae", "train-mapper")
    pairs = [p for p in build_pairs(run) if p.split == "train"]
    tc = mapper.TrainConfig(
        max_epochs=cfg.mapper_max_epochs, patience=cfg.patience, val_frac=cfg.val_frac, batch_size=cfg.mapper_batch
    )
    result = mapper.train_mapper(pairs, tc, seed=cfg.seed)
    outputs = {"mapper": run / "mapper.dnet", "history": run / "mapper_history.csv"}
    commit_bytes(outputs["mapper"], result.model.net.to_bytes(), force)
    with commit(outputs["history"], force) as tmp:
        mapper.write_history_csv(result.history, tmp)
    manifest.record("train-mapper", cfg, outputs.values())
    return {"result": result, "outputs": outputs}


class Reconstructor:
    """Loads the trained stages of a run and maps images to meshes."""

    def __init__(self, cfg: PipelineConfig, run_dir):
        run = Path(run_dir)
        manifest = RunManifest(run)
        for stage in ("train-decoder", "features", "train-ae", "train-mapper"):
            manifest.require(stage, "reconstruct")
        self.cfg = cfg
        self.model = decoder.DecoderModel.load(run / "decoder.dnet")
        _, cents = store.read_vectors(run / "codebook.vecs", store.VECTOR_MAGIC)
        ae = compressor.AutoencoderModel.load(run / "autoencoder.aenc")
        self.featurizer = Featurizer(cfg, features.Codebook(cents), ae)
        self.mapper = mapper.MapperModel.load(run / "mapper.dnet")

    def latent(self, image) -> decoder.LatentCode:
        return mapper.predict_latent(self.mapper, self.featurizer.combined(image))

    def mesh(self, latent) -> mesher.Mesh:
        return decoder.reconstruct_mesh(self.model, latent, self.cfg.grid_res)


def reconstruct_image(cfg: PipelineConfig, run_dir, image_path, out_path, force: bool = False) -> mesher.Mesh:
    rec = Reconstructor(cfg, run_dir)
    px = render.read_pgm(image_path)
    if px.shape != (cfg.image_size, cfg.image_size):
        raise PipelineError(f"{image_path} is {px.shape[1]}x{px.shape[0]}, the run expects {cfg.image_size}x{cfg.image_size}")
    mesh = rec.mesh(rec.latent(px))
    with commit(out_path, force) as tmp:
        mesher.write_obj(mesh, tmp)
    return mesh


def report_csv_bytes(rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(metrics.REPORT_FIELDS)
    for shape_id, angle, rep in rows:
        w.writerow([shape_id, angle, f"{rep.cd_scaled:.9g}", f"{rep.emd_scaled:.9g}", rep.n, rep.solver])
    return buf.getvalue().encode("utf-8")


def eval_meshes(pred_path, gt_path, out_path, n: int, seed: int, shape_id="", angle="", force=False):
    pred = mesher.read_obj(pred_path)
    gt = mesher.read_obj(gt_path)
    for p, m in ((pred_path, pred), (gt_path, gt)):
        if m.is_empty:
            raise PipelineError(f"{p} has no triangles")
    rep = metrics.evaluate_reconstruction(pred, gt, n=n, seed=seed)
    commit_bytes(out_path, report_csv_bytes([(shape_id, angle, rep)]), force)
    return rep


def held_out_view(cfg: PipelineConfig, shape, shape_id: str, angle: float) -> render.ViewImage:
    """A view never seen in training: a fresh augmentation of the render at ``angle``."""
    base = render.render_view(shape.sdf, camera(cfg), angle, shape_id)
    return render.augment(base, seed=augment_seed(cfg, shape_id, angle, 0, purpose=2))


def derangement(n: int, seed) -> np.ndarray:
    """Seeded permutation with no fixed points (n >= 2)."""
    if n < 2:
        raise ValueError("a derangement needs at least two items")
    rng = np.random.default_rng(seed)
    while True:
        p = rng.permutation(n)
        if np.all(p != np.arange(n)):
            return p


def stage_eval_svr(cfg: PipelineConfig, run_dir, force: bool = False) -> dict:
    """Reconstruct held-out views of every training shape and score them, alongside a
    shuffled-pairing baseline (each shape scored against another shape's predictions)."""
    run = Path(run_dir)
    rec = Reconstructor(cfg, run)
    roster = dict(load_roster(cfg))
    splits = read_splits(run / "splits.txt")
    ids = [sid for sid in roster if splits[sid] == "train"]
    gt = {sid: mesher.marching_cubes(mesher.eval_grid(roster[sid].sdf, cfg.grid_res)) for sid in ids}
    meshes = {}
    for sid in ids:
        for angle in render.VIEW_ANGLES:
            meshes[sid, angle] = rec.mesh(rec.latent(held_out_view(cfg, roster[sid], sid, angle)))

    def score(mesh, sid):
        if mesh.is_empty:
            # nothing reconstructed: infinitely far from the target
            solver = "exact" if cfg.eval_points <= metrics.EMD_EXACT_MAX else "approx"
            return metrics.MetricReport(float("inf"), float("inf"), cfg.eval_points, solver)
        return metrics.evaluate_reconstruction(mesh, gt[sid], n=cfg.eval_points, seed=cfg.seed)

    perm = derangement(len(ids), [cfg.seed, 0xBA5E])
    rows, base_rows = [], []
    for k, sid in enumerate(ids):
        other = ids[perm[k]]
        for angle in render.VIEW_ANGLES:
            rows.append((sid, angle, score(meshes[sid, angle], sid)))
            base_rows.append((sid, angle, score(meshes[other, angle], sid)))
    outputs = {"report": run / "svr_report.csv", "baseline": run / "svr_baseline.csv"}
    commit_bytes(outputs["report"], report_csv_bytes(rows), force)
    commit_bytes(outputs["baseline"], report_csv_bytes(base_rows), force)
    RunManifest(run).record("eval-svr", cfg, outputs.values())
    return {"rows": rows, "baseline": base_rows, "shapes": ids, "outputs": outputs}


def svr_summary(rows, base_rows) -> dict:
    """Per-shape mean CD for mapper and baseline, win flags and view spread."""
    by = {}
    for (sid, _, rep), (_, _, brep) in zip(rows, base_rows):
        d = by.setdefault(sid, {"mapper": [], "baseline": []})
        d["mapper"].append(rep.cd_scaled)
        d["baseline"].append(brep.cd_scaled)
    out = {}
    for sid, d in by.items():
        m = np.array(d["mapper"])
        b = np.array(d["baseline"])
        out[sid] = {
            "mapper_cd": float(m.mean()),
            "baseline_cd": float(b.mean()),
            "win": bool(m.mean() < b.mean()),
            "spread": float(m.max() / np.median(m)),
        }
    return out


# --------------------------------------------------------------------------
# filter
# --------------------------------------------------------------------------

TEMPLATE_PREFIX = "template:"


def filter_store(vectors_path, out_path, force: bool = False) -> list[str]:
    """Keep list from a vector store of image and template embeddings.

    Entries whose id starts with ``template:`` are templates, the rest images.
    """
    ids, vecs = store.read_vectors(vectors_path, store.VECTOR_MAGIC)
    tmpl = np.array([v for i, v in zip(ids, vecs) if i.startswith(TEMPLATE_PREFIX)])
    images = [(i, v) for i, v in zip(ids, vecs) if not i.startswith(TEMPLATE_PREFIX)]
    if len(tmpl) == 0:
        raise PipelineError(f"{vectors_path} holds no '{TEMPLATE_PREFIX}' entries")
    if len(images) < 2:
        raise PipelineError(f"{vectors_path} holds {len(images)} image embeddings; filtering needs at least 2")
    dist = np.array([features.avg_embedding_distance(v, tmpl) for _, v in images])
    keep = features.filter_dataset(dist)
    kept = [i for (i, _), k in zip(images, keep) if k]
    commit_text(out_path, "".join(f"{i}\n" for i in kept), force)
    return kept
