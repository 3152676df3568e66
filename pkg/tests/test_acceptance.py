"""Acceptance suite: the eight desk-scale criteria.

Each test prints one ``[criterion N] PASS|FAIL`` line (collected and repeated
in the pytest terminal summary).  Criteria 6-8 share two full pipeline runs
in temporary directories.  Run standalone with ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from shapemapper import decoder, features, mapper, mesher, metrics, pipeline, render, shapes, store
from shapemapper.nn import DenseNet, grad_check

RESULTS: dict[int, str] = {}

# the desk run: defaults plus a fixed seed
DESK_CONFIG = "seed = 0\n"

# artifacts criterion 8 compares byte for byte
DETERMINISM_FILES = (
    "latents.lats",
    "decoder.dnet",
    "decoder_history.csv",
    "codebook.vecs",
    "bags.vecs",
    "embeds.vecs",
    "autoencoder.aenc",
    "mapper.dnet",
    "mapper_history.csv",
    "svr_report.csv",
    "svr_baseline.csv",
)


def report(n: int, ok: bool, detail: str) -> None:
    line = f"[criterion {n}] {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)


# ---------------------------------------------------------------- 1


def random_net(rng, latent_input: bool):
    n_layers = int(rng.integers(1, 5))
    if latent_input:
        sizes = [int(rng.integers(1, 61)) + 3]
    else:
        sizes = [int(rng.integers(1, 65))]
    sizes += [int(rng.integers(1, 65)) for _ in range(n_layers - 1)] + [int(rng.integers(1, 9))]
    acts = [str(rng.choice(["relu", "tanh"])) for _ in range(n_layers - 1)] + [str(rng.choice(["identity", "tanh"]))]
    net = DenseNet.create(sizes, acts, seed=int(rng.integers(2**31)), dtype=np.float64)
    for layer in net.layers:
        layer.bias[:] = rng.normal(scale=0.1, size=layer.bias.shape)
    return net


def test_criterion_1_gradient_fidelity():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(20):
        latent_input = k % 2 == 0  # half the nets take [latent, xyz] like the decoder
        net = random_net(rng, latent_input)
        x = rng.normal(size=(4, net.input_dim))
        t = rng.normal(size=(4, net.output_dim))
        loss = "L1" if k % 3 == 0 else "L2"
        worst = max(worst, grad_check(net, x, t, loss, wrt_input=True))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-5 and elapsed < 30
    report(1, ok, f"20 nets, worst relative error {worst:.2e} (< 1e-5), {elapsed:.1f}s (< 30s)")
    assert ok


# ---------------------------------------------------------------- 2


def brute_force_emd(A, B, perms):
    d = np.linalg.norm(A[:, None] - B[None], axis=-1)
    return d[np.arange(len(A)), perms].mean(axis=1).min()


def test_criterion_2_emd_oracle():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for n in range(2, 8):
        perms = np.array(list(itertools.permutations(range(n))))
        for _ in range(100):
            A, B = rng.normal(size=(2, n, 3))
            worst = max(worst, abs(metrics.emd_exact(A, B) - brute_force_emd(A, B, perms)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 60
    report(2, ok, f"600 instances n=2..7, max |exact - brute| {worst:.1e} (<= 1e-9), {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 3


def test_criterion_3_emd_approx():
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    ratios = []
    below = 0
    for k in range(50):
        A, B = rng.uniform(size=(2, 64, 3))
        exact = metrics.emd_exact(A, B)
        approx = metrics.emd_approx(A, B, seed=k)
        below += approx < exact - 1e-9
        ratios.append(approx / exact)
    elapsed = time.perf_counter() - t0
    within = float(np.mean(np.array(ratios) <= 1.25))
    ok = below == 0 and within >= 0.95 and elapsed < 60
    report(
        3,
        ok,
        f"50 instances n=64: {below} below exact; ratio <= 1.25 on {within:.0%} (>= 95%), "
        f"max ratio {max(ratios):.3f}, {elapsed:.1f}s",
    )
    assert ok


# ---------------------------------------------------------------- 4


def test_criterion_4_marching_cubes():
    t0 = time.perf_counter()
    grid = mesher.eval_grid(shapes.Sphere(0.5).sdf, 64)
    mesh = mesher.marching_cubes(grid)
    err = float(np.abs(np.linalg.norm(mesh.vertices, axis=1) - 0.5).max())
    closed = mesh.is_closed()
    chi = mesh.euler_characteristic()
    elapsed = time.perf_counter() - t0
    ok = err <= 2 / 63 and closed and chi == 2 and elapsed < 10
    report(4, ok, f"max | |v| - 0.5 | {err:.2e} (<= {2 / 63:.4f}), closed={closed}, chi={chi}, {elapsed:.2f}s")
    assert ok


# ---------------------------------------------------------------- 5


def test_criterion_5_filter():
    t0 = time.perf_counter()
    d = np.array([0.2] * 99 + [0.9])
    keep = features.filter_dataset(d)
    fixture_ok = bool(keep[:99].all() and not keep[99])
    rng = np.random.default_rng(5)
    shift_ok = 0
    for _ in range(100):
        n = int(rng.integers(2, 200))
        dist = rng.uniform(0, 1, size=n)
        if rng.random() < 0.5:
            dist[rng.integers(n)] += rng.uniform(0.5, 2)
        c = rng.uniform(-1, 1)
        shift_ok += np.array_equal(features.filter_dataset(dist), features.filter_dataset(dist + c))
    elapsed = time.perf_counter() - t0
    ok = fixture_ok and shift_ok == 100 and elapsed < 5
    report(5, ok, f"outlier fixture {'ok' if fixture_ok else 'wrong'}; shift invariance {shift_ok}/100; {elapsed:.2f}s")
    assert ok


# ---------------------------------------------------------------- desk runs (6-8)


def run_pipeline(run: Path) -> dict:
    cfg = pipeline.parse_config(DESK_CONFIG)
    times = {}
    t0 = time.perf_counter()
    pipeline.stage_train_decoder(cfg, run)
    times["decoder"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    pipeline.stage_render_dataset(cfg, run)
    pipeline.stage_features(cfg, run)
    pipeline.stage_train_ae(cfg, run)
    pipeline.stage_train_mapper(cfg, run)
    svr = pipeline.stage_eval_svr(cfg, run)
    times["svr"] = time.perf_counter() - t0
    return {"cfg": cfg, "run": run, "times": times, "svr": svr}


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("desk_a"))


@pytest.fixture(scope="module")
def desk_rerun(tmp_path_factory, desk):
    return run_pipeline(tmp_path_factory.mktemp("desk_b"))


@pytest.mark.slow
def test_criterion_6_autodecoder(desk):
    cfg, run = desk["cfg"], desk["run"]
    t0 = time.perf_counter()
    hist = np.loadtxt(run / "decoder_history.csv", delimiter=",", skiprows=1)[:, 1]
    model = decoder.DecoderModel.load(run / "decoder.dnet")
    ids, lats = store.read_latents(run / "latents.lats")
    roster = dict(pipeline.load_roster(cfg))
    recon, floor = [], []
    for sid, c in zip(ids, lats):
        gt = mesher.marching_cubes(mesher.eval_grid(roster[sid].sdf, 64))
        pred = decoder.reconstruct_mesh(model, c, 64)
        recon.append(metrics.evaluate_reconstruction(pred, gt, n=1024, seed=0).cd_scaled)
        a = mesher.sample_surface(gt, 1024, seed=1)
        b = mesher.sample_surface(gt, 1024, seed=2)
        floor.append(metrics.chamfer(a, b) * metrics.CD_SCALE)
    elapsed = desk["times"]["decoder"] + time.perf_counter() - t0
    med, noise = float(np.median(recon)), float(np.median(floor))
    ratio = hist[-1] / hist[0]
    ok = len(ids) == 16 and lats.shape[1] == 32 and ratio < 0.5 and med <= 10 * noise and elapsed < 600
    report(
        6,
        ok,
        f"16 shapes: final/epoch-1 loss {ratio:.3f} (< 0.5); median CD x1e3 {med:.3f} vs noise floor "
        f"{noise:.3f} -> {med / noise:.1f}x (<= 10x); {elapsed:.0f}s",
    )
    assert ok


@pytest.mark.slow
def test_criterion_7_svr(desk):
    svr = desk["svr"]
    summary = pipeline.svr_summary(svr["rows"], svr["baseline"])
    wins = float(np.mean([s["win"] for s in summary.values()]))
    spread = {sid: s["spread"] for sid, s in summary.items()}
    worst = max(spread, key=spread.get)
    elapsed = desk["times"]["svr"]
    ok = wins >= 0.75 and spread[worst] <= 3 and elapsed < 600
    report(
        7,
        ok,
        f"{len(summary)} training shapes: mapper wins {wins:.0%} (>= 75%); max view spread "
        f"{spread[worst]:.2f} on {worst} (<= 3); {elapsed:.0f}s",
    )
    assert ok


@pytest.mark.slow
def test_criterion_8_determinism(desk, desk_rerun):
    a, b = desk["run"], desk_rerun["run"]
    differing = [f for f in DETERMINISM_FILES if pipeline.file_hash(a / f) != pipeline.file_hash(b / f)]
    ok = not differing
    report(8, ok, f"{len(DETERMINISM_FILES) - len(differing)}/{len(DETERMINISM_FILES)} artifacts byte-identical"
           + (f"; differ: {', '.join(differing)}" if differing else ""))
    assert ok


# ---------------------------------------------------------------- measured examples


@pytest.mark.slow
def test_desk_decoder_fits_training_surfaces(desk):
    """On-surface points of training shapes decode to |sdf| < 0.05 for >= 90% of points."""
    cfg, run = desk["cfg"], desk["run"]
    model = decoder.DecoderModel.load(run / "decoder.dnet")
    ids, lats = store.read_latents(run / "latents.lats")
    roster = dict(pipeline.load_roster(cfg))
    fracs = []
    for sid, c in zip(ids, lats):
        s = shapes.sample_near_surface(roster[sid], 500, sigmas=(1e-6,), seed=7)
        fracs.append(float((np.abs(decoder.decode(model, c, s.points)) < 0.05).mean()))
    assert min(fracs) >= 0.9, dict(zip(ids, np.round(fracs, 3)))
    d = np.linalg.norm(lats[:, None] - lats[None], axis=-1)
    assert d[~np.eye(len(ids), dtype=bool)].min() > 0


@pytest.mark.slow
def test_desk_encode_matches_training_loss(desk):
    """Re-encoding a training shape with 500 steps reaches <= 1.5x its training-time loss."""
    cfg, run = desk["cfg"], desk["run"]
    model = decoder.DecoderModel.load(run / "decoder.dnet")
    ids, lats = store.read_latents(run / "latents.lats")
    data = {s.shape_id: s for s in shapes.make_dataset(pipeline.load_roster(cfg), cfg.n_uniform, cfg.n_surface, cfg.seed)}
    for sid, c in list(zip(ids, lats))[:4]:
        trained = decoder.sample_loss(model, c, data[sid])
        code = decoder.encode_shape(model, data[sid], steps=500, seed=0)
        assert decoder.sample_loss(model, code, data[sid]) <= 1.5 * trained, sid


@pytest.mark.slow
def test_desk_latent_nearness(desk):
    """Every training view's predicted latent is nearer its own shape than >= 75% of the others.

    Measured on the seed-0 desk run: all 117 training views beat every other shape.
    """
    cfg, run = desk["cfg"], desk["run"]
    rec = pipeline.Reconstructor(cfg, run)
    ids, lats = store.read_latents(run / "latents.lats")
    splits = pipeline.read_splits(run / "splits.txt")
    own = dict(zip(ids, lats))
    train = [s for s in ids if splits[s] == "train"]
    fractions = []
    for name, sid, _ in pipeline.read_view_index(run):
        if splits[sid] != "train":
            continue
        c = rec.latent(render.read_pgm(run / "views" / name)).c
        d_own = np.linalg.norm(c - own[sid])
        others = [np.linalg.norm(c - own[s]) for s in train if s != sid]
        fractions.append(np.mean(d_own < np.array(others)))
    assert min(fractions) >= 0.75


@pytest.mark.slow
def test_desk_reconstruct_cli(desk, tmp_path):
    from shapemapper import cli

    run = desk["run"]
    cfg_path = tmp_path / "desk.cfg"
    cfg_path.write_text(DESK_CONFIG)
    name = next(n for n, sid, _ in pipeline.read_view_index(run) if pipeline.read_splits(run / "splits.txt")[sid] == "train")
    out = tmp_path / "r.obj"
    assert cli.main(["reconstruct", "--config", str(cfg_path), "--run-dir", str(run), str(run / "views" / name), "-o", str(out)]) == 0
    assert len(mesher.read_obj(out)) >= 1


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
