"""``shapemapper`` command line: one subcommand per pipeline stage.

Dimensional settings live in a key=value config file (``--config`` or
``$SHAPEMAPPER_CONFIG``); flags cover paths, the seed and ``--force``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline, shapes

log = logging.getLogger("shapemapper")


def _common(p: argparse.ArgumentParser, run_dir: bool = True) -> None:
    p.add_argument("--config", help=f"key=value config file (default: ${pipeline.CONFIG_ENV} or built-in defaults)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--force", action="store_true", help="overwrite artifacts whose content differs")
    if run_dir:
        p.add_argument("--run-dir", default="runs/default", help="directory holding the stage artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapemapper", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-decoder", help="fit the SDF auto-decoder and latent codes for every shape")
    _common(p)
    p.add_argument("--manifest", help="shape manifest (default: config value, else the shipped roster)")

    p = sub.add_parser("render-dataset", help="render 9 views of every shape to PGM files")
    _common(p)
    p.add_argument("--manifest")

    for name, text in (
        ("features", "fit the codebook; bag features and global embeddings for all views"),
        ("train-ae", "train the feature autoencoder on training-split bag features"),
        ("train-mapper", "train the feature-to-latent mapper on training-split pairs"),
    ):
        _common(sub.add_parser(name, help=text))

    p = sub.add_parser("reconstruct", help="image -> latent -> mesh (OBJ)")
    _common(p)
    p.add_argument("image", help="binary PGM of size image_size")
    p.add_argument("-o", "--out", required=True, help="output OBJ path")

    p = sub.add_parser("eval", help="score meshes with Chamfer and EMD")
    _common(p)
    p.add_argument("--pred", help="predicted OBJ")
    p.add_argument("--gt", help="ground-truth OBJ")
    p.add_argument("--shape-id", default="")
    p.add_argument("--view-angle", default="")
    p.add_argument("-n", "--points", type=int, help="surface samples per mesh (default: config eval_points)")
    p.add_argument("-o", "--out", help="report CSV (default: <run-dir>/eval_report.csv)")
    p.add_argument("--svr", action="store_true", help="held-out views of training shapes vs a shuffled baseline")

    p = sub.add_parser("filter", help="embedding-distance outlier filter over a VECS store")
    _common(p, run_dir=False)
    p.add_argument("vectors", help="VECS store; ids starting with 'template:' are templates")
    p.add_argument("-o", "--out", required=True, help="keep list, one id per line")

    p = sub.add_parser("shapes", help="inspect shape manifests")
    shapes_sub = p.add_subparsers(dest="shapes_command", required=True)
    q = shapes_sub.add_parser("list", help="print shape ids")
    q.add_argument("--manifest")
    q.add_argument("--config")
    return parser


def _config(args) -> pipeline.PipelineConfig:
    overrides = {"seed": getattr(args, "seed", None)}
    if getattr(args, "manifest", None):
        overrides["manifest"] = args.manifest
    return pipeline.load_config(args.config, **overrides)


def _run(args) -> int:
    if args.command == "shapes":
        cfg = _config(args)
        for sid, shape in pipeline.load_roster(cfg):
            print(sid)
        return 0

    cfg = _config(args)
    if args.command == "filter":
        if not Path(args.vectors).is_file():
            raise pipeline.PipelineError(f"vector store not found: {args.vectors}")
        kept = pipeline.filter_store(args.vectors, args.out, args.force)
        print(f"kept {len(kept)} images -> {args.out}")
        return 0

    run = Path(args.run_dir)
    if args.command == "train-decoder":
        out = pipeline.stage_train_decoder(cfg, run, args.force)
        hist = out["result"].history
        print(f"trained on {len(out['roster'])} shapes; L1 {hist[0]:.5f} -> {hist[-1]:.5f}; wrote {run}/latents.lats")
    elif args.command == "render-dataset":
        out = pipeline.stage_render_dataset(cfg, run, args.force)
        print(f"wrote {len(out['files'])} views and {out['index']}")
    elif args.command == "features":
        out = pipeline.stage_features(cfg, run, args.force)
        print(f"codebook K={out['codebook'].K}; wrote {out['outputs']['bags']}")
    elif args.command == "train-ae":
        out = pipeline.stage_train_ae(cfg, run, args.force)
        hist = out["result"].history
        print(f"autoencoder L2 {hist[0]:.3g} -> {hist[-1]:.3g}")
    elif args.command == "train-mapper":
        out = pipeline.stage_train_mapper(cfg, run, args.force)
        res = out["result"]
        print(f"mapper stopped after {len(res.history)} epochs; best epoch {res.best_epoch}")
    elif args.command == "reconstruct":
        if not Path(args.image).is_file():
            raise pipeline.PipelineError(f"image not found: {args.image}")
        mesh = pipeline.reconstruct_image(cfg, run, args.image, args.out, args.force)
        print(f"{len(mesh)} triangles -> {args.out}")
    elif args.command == "eval":
        if args.svr:
            out = pipeline.stage_eval_svr(cfg, run, args.force)
            summary = pipeline.svr_summary(out["rows"], out["baseline"])
            for sid, s in summary.items():
                print(f"{sid}: mapper {s['mapper_cd']:.3f} baseline {s['baseline_cd']:.3f} spread {s['spread']:.2f}")
            wins = sum(s["win"] for s in summary.values())
            print(f"mapper wins on {wins}/{len(summary)} shapes; wrote {out['outputs']['report']}")
        else:
            if not (args.pred and args.gt):
                raise pipeline.PipelineError("eval needs --pred and --gt (or --svr)")
            for p in (args.pred, args.gt):
                if not Path(p).is_file():
                    raise pipeline.PipelineError(f"mesh not found: {p}")
            out_path = args.out or run / "eval_report.csv"
            rep = pipeline.eval_meshes(
                args.pred, args.gt, out_path, args.points or cfg.eval_points, cfg.seed,
                args.shape_id, args.view_angle, args.force,
            )
            print(f"CD x1e3 {rep.cd_scaled:.4f}  EMD x1e2 {rep.emd_scaled:.4f} ({rep.solver}) -> {out_path}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (pipeline.PipelineError, ValueError, OSError, FloatingPointError) as exc:
        print(f"shapemapper {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
