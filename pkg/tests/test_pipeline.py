import json

import numpy as np
import pytest

from shapemapper import cli, mesher, pipeline, render, store
from shapemapper.pipeline import PipelineConfig, PipelineError

MANIFEST = """\
# four small shapes
ball (sphere 0.5)
brick (box 0.5 0.2 0.3)
ring (torus 0.5 0.15)
rod (capsule -0.6 0 0 0.6 0 0 0.2)
"""

TINY = """\
latent_dim = 4
decoder_width = 16
decoder_layers = 2
n_uniform = 100
n_surface = 100
decoder_epochs = 3
grid_res = 16
image_size = 32
n_augment = 1
scales = 2
K = 4
image_sample = 20
keep_frac = 0.5
kmeans_epochs = 2
embed_dim = 16
bottleneck_dim = 4
ae_epochs = 3
mapper_max_epochs = 3
split_train = 0.5
split_val = 0.25
split_test = 0.25
eval_points = 64
"""


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    (root / "shapes.txt").write_text(MANIFEST)
    (root / "tiny.cfg").write_text(TINY + f"manifest = {root / 'shapes.txt'}\n")
    run = root / "out"
    common = ["--config", str(root / "tiny.cfg"), "--run-dir", str(run)]
    for cmd in ("train-decoder", "render-dataset", "features", "train-ae", "train-mapper"):
        assert cli.main([cmd, *common]) == 0, cmd
    return root, run, common


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# ---------------------------------------------------------------- config


def test_config_defaults_and_digest():
    cfg = pipeline.parse_config("")
    assert cfg.K == 20 and cfg.latent_dim == 32
    assert (cfg.split_train, cfg.split_val, cfg.split_test) == (0.8, 0.1, 0.1)
    assert cfg.digest() == pipeline.parse_config(cfg.to_text()).digest()
    assert cfg.digest() != pipeline.parse_config("seed = 1").digest()


@pytest.mark.parametrize(
    "text, msg",
    [
        ("bogus = 1", "unknown key"),
        ("K = ten", "expects"),
        ("K", "key=value"),
        ("K = 0", "positive"),
        ("split_train = 0.5", "sum to 1"),
        ("image_size = 30", "multiple of patch"),
    ],
)
def test_config_errors(text, msg):
    with pytest.raises(ValueError, match=msg):
        pipeline.parse_config(text)


def test_config_env_var(tmp_path, monkeypatch):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nK = 7  # inline\n")
    monkeypatch.setenv(pipeline.CONFIG_ENV, str(p))
    assert pipeline.load_config().K == 7
    assert pipeline.load_config(seed=3).seed == 3
    monkeypatch.setenv(pipeline.CONFIG_ENV, str(tmp_path / "missing.cfg"))
    with pytest.raises(PipelineError, match="missing.cfg"):
        pipeline.load_config()


def test_split_shapes():
    ids = [f"s{k}" for k in range(16)]
    splits = pipeline.split_shapes(ids, pipeline.parse_config(""))
    counts = {s: list(splits.values()).count(s) for s in ("train", "val", "test")}
    assert counts == {"train": 13, "val": 2, "test": 1}
    assert splits == pipeline.split_shapes(ids, pipeline.parse_config(""))
    assert splits != pipeline.split_shapes(ids, pipeline.parse_config("seed = 5"))


def test_derangement():
    for seed in range(20):
        p = pipeline.derangement(5, seed)
        assert sorted(p) == list(range(5)) and (p != np.arange(5)).all()
    with pytest.raises(ValueError):
        pipeline.derangement(1, 0)


# ---------------------------------------------------------------- artifacts


def test_commit_refuses_to_overwrite(tmp_path):
    p = tmp_path / "a.txt"
    pipeline.commit_text(p, "one")
    pipeline.commit_text(p, "one")  # identical content is fine
    with pytest.raises(PipelineError, match="refusing to overwrite"):
        pipeline.commit_text(p, "two")
    assert p.read_text() == "one"
    pipeline.commit_text(p, "two", force=True)
    assert p.read_text() == "two"
    assert [f.name for f in tmp_path.iterdir()] == ["a.txt"]


def test_manifest_require(tmp_path):
    cfg = pipeline.parse_config("")
    out = tmp_path / "x.bin"
    out.write_bytes(b"abc")
    m = pipeline.RunManifest(tmp_path)
    m.record("stage-a", cfg, [out])
    data = json.loads((tmp_path / pipeline.MANIFEST_NAME).read_text())
    assert data["config_hash"] == cfg.digest()
    assert data["stages"]["stage-a"]["outputs"]["x.bin"] == pipeline.file_hash(out)
    assert pipeline.RunManifest(tmp_path).require("stage-a", "b") == {"x.bin": pipeline.file_hash(out)}
    with pytest.raises(PipelineError, match="stage-z"):
        m.require("stage-z", "b")
    out.write_bytes(b"tampered")
    with pytest.raises(PipelineError, match="changed"):
        m.require("stage-a", "b")
    out.unlink()
    with pytest.raises(PipelineError, match="missing"):
        m.require("stage-a", "b")
    with pytest.raises(PipelineError, match="did not produce"):
        m.record("stage-b", cfg, [tmp_path / "nope"])


# ---------------------------------------------------------------- end to end (tiny)


def test_tiny_run_artifacts(tiny_run):
    root, run, _ = tiny_run
    ids, lats = store.read_latents(run / "latents.lats")
    assert ids == ["ball", "brick", "ring", "rod"]
    assert lats.shape == (4, 4)
    views = sorted(p.name for p in (run / "views").glob("*.pgm"))
    assert len(views) == 36
    index = [line.split()[0] for line in (run / "views" / "index.txt").read_text().splitlines()]
    assert sorted(index) == views
    assert "ring_240.pgm" in views
    manifest = json.loads((run / pipeline.MANIFEST_NAME).read_text())
    assert set(manifest["stages"]) == {"train-decoder", "render-dataset", "features", "train-ae", "train-mapper"}
    for name in ("decoder.dnet", "autoencoder.aenc", "mapper.dnet", "mapper_history.csv"):
        assert (run / name).is_file()


def test_mapper_sees_only_training_shapes(tiny_run):
    _, run, _ = tiny_run
    splits = pipeline.read_splits(run / "splits.txt")
    rows = pipeline.read_features_index(run)
    train_ids = {i for i, sid, split in rows if split == "train"}
    assert all(splits[sid] == split for _, sid, split in rows)
    assert all("_aug" not in i for i, sid, split in rows if split != "train")
    n_train_shapes = sum(s == "train" for s in splits.values())
    assert len(train_ids) == n_train_shapes * 9 * 2


def test_rerun_is_idempotent_and_deterministic(tiny_run, tmp_path):
    root, run, common = tiny_run
    before = pipeline.file_hash(run / "latents.lats")
    assert cli.main(["train-decoder", *common]) == 0
    assert pipeline.file_hash(run / "latents.lats") == before
    other = tmp_path / "again"
    assert cli.main(["train-decoder", "--config", str(root / "tiny.cfg"), "--run-dir", str(other)]) == 0
    assert (other / "latents.lats").read_bytes() == (run / "latents.lats").read_bytes()
    assert (other / "decoder.dnet").read_bytes() == (run / "decoder.dnet").read_bytes()


def test_differing_artifact_needs_force(tiny_run, tmp_path, capsys):
    root, run, common = tiny_run
    other = tmp_path / "r"
    base = ["--config", str(root / "tiny.cfg"), "--run-dir", str(other)]
    assert cli.main(["train-decoder", *base]) == 0
    code, _, err = run_cli(capsys, "train-decoder", *base, "--seed", "9")
    assert code != 0 and "--force" in err
    assert cli.main(["train-decoder", *base, "--seed", "9", "--force"]) == 0


def test_stage_order_enforced(tmp_path, capsys):
    code, _, err = run_cli(capsys, "train-ae", "--run-dir", str(tmp_path / "empty"))
    assert code != 0
    assert "features" in err


def test_tampered_input_is_detected(tiny_run, tmp_path, capsys):
    import shutil

    _, run, common = tiny_run
    copy = tmp_path / "copy"
    shutil.copytree(run, copy)
    (copy / "bags.vecs").write_bytes((copy / "bags.vecs").read_bytes()[:-4] + b"\0\0\0\0")
    idx = common.index("--run-dir")
    args = common[:idx] + ["--run-dir", str(copy)]
    code, _, err = run_cli(capsys, "train-ae", *args)
    assert code != 0 and "changed" in err


def test_missing_manifest_path(tmp_path, capsys):
    code, _, err = run_cli(capsys, "train-decoder", "--manifest", str(tmp_path / "none.shapes"), "--run-dir", str(tmp_path))
    assert code != 0 and "none.shapes" in err


def test_reconstruct_and_eval(tiny_run, tmp_path, capsys):
    root, run, common = tiny_run
    view = run / "views" / "ball_30.pgm"
    obj = tmp_path / "ball.obj"
    code, out, err = run_cli(capsys, "reconstruct", *common, str(view), "-o", str(obj))
    assert code == 0, err
    assert obj.is_file()

    code, _, err = run_cli(capsys, "reconstruct", *common, str(tmp_path / "no.pgm"), "-o", str(obj))
    assert code != 0 and "no.pgm" in err

    wrong = tmp_path / "small.pgm"
    render.write_pgm(np.zeros((8, 8)), wrong)
    code, _, err = run_cli(capsys, "reconstruct", *common, str(wrong), "-o", str(tmp_path / "w.obj"))
    assert code != 0 and "expects 32x32" in err


def test_eval_identical_meshes(tmp_path, capsys):
    from shapemapper.shapes import Sphere

    mesh = mesher.marching_cubes(mesher.eval_grid(Sphere(0.5).sdf, 16))
    mesher.write_obj(mesh, tmp_path / "a.obj")
    csv = tmp_path / "r.csv"
    code, out, err = run_cli(
        capsys, "eval", "--pred", str(tmp_path / "a.obj"), "--gt", str(tmp_path / "a.obj"),
        "--shape-id", "ball", "--view-angle", "30", "-n", "100", "-o", str(csv), "--run-dir", str(tmp_path),
    )
    assert code == 0, err
    lines = csv.read_text().splitlines()
    assert lines[0] == "shape_id,view_angle,cd_scaled,emd_scaled,n,solver"
    row = lines[1].split(",")
    assert row[0] == "ball" and row[1] == "30" and float(row[2]) == 0.0 and row[5] == "exact"


def test_eval_needs_meshes(tmp_path, capsys):
    code, _, err = run_cli(capsys, "eval", "--run-dir", str(tmp_path))
    assert code != 0 and "--pred" in err


def test_eval_svr_tiny(tiny_run, capsys):
    _, run, common = tiny_run
    code, out, err = run_cli(capsys, "eval", "--svr", *common)
    assert code == 0, err
    assert "mapper wins on" in out
    lines = (run / "svr_report.csv").read_text().splitlines()
    n_train = sum(s == "train" for s in pipeline.read_splits(run / "splits.txt").values())
    assert len(lines) == 1 + 9 * n_train
    assert all(line.split(",")[-1] == "exact" for line in lines[1:])


def test_filter_fixture(tmp_path, capsys):
    # 99 images at cosine distance 0.2 from the single template, one at 0.9
    t = np.array([1.0, 0.0])

    def at(d):
        c = 1 - d
        return np.array([c, np.sqrt(1 - c * c)])

    ids = ["template:a photo of a"] + [f"img{k}" for k in range(100)]
    vecs = [t] + [at(0.2)] * 99 + [at(0.9)]
    store.write_vectors(tmp_path / "e.vecs", ids, np.array(vecs))
    keep = tmp_path / "keep.txt"
    code, out, err = run_cli(capsys, "filter", str(tmp_path / "e.vecs"), "-o", str(keep))
    assert code == 0, err
    kept = keep.read_text().split()
    assert len(kept) == 99 and "img99" not in kept


def test_filter_errors(tmp_path, capsys):
    store.write_vectors(tmp_path / "e.vecs", ["a", "b"], np.eye(2))
    code, _, err = run_cli(capsys, "filter", str(tmp_path / "e.vecs"), "-o", str(tmp_path / "k"))
    assert code != 0 and "template:" in err
    code, _, err = run_cli(capsys, "filter", str(tmp_path / "none.vecs"), "-o", str(tmp_path / "k"))
    assert code != 0 and "none.vecs" in err


def test_shapes_list(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "shapes", "list")
    assert code == 0 and len(out.split()) == 16
    (tmp_path / "m.txt").write_text(MANIFEST)
    code, out, _ = run_cli(capsys, "shapes", "list", "--manifest", str(tmp_path / "m.txt"))
    assert out.split() == ["ball", "brick", "ring", "rod"]


def test_console_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "shapemapper.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("train-decoder", "render-dataset", "features", "train-ae", "train-mapper", "reconstruct", "eval", "filter", "shapes"):
        assert cmd in res.stdout
