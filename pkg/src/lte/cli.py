"""Command-line front end: ``lte <command> [flags]``.

Exit codes: 0 ok, 1 usage, 2 bad input data, 3 numeric failure. Thread count
comes from ``LTE_THREADS`` (default 1); tracer work is split across threads by
point ranges, and results do not depend on the thread count.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

import lte
from lte import sampling
from lte.autodiff.checkpoint import CheckpointError
from lte.encoder import EmbeddingFormatError
from lte.imageio import ImageFormatError, write_pfm, write_png
from lte.scene import SceneError, cornell_box, generate_mini_scene, lightbox_scene, load_scene, save_scene, \
    two_room_scene, MiniSceneConfig

log = logging.getLogger("lte")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
ENV_THREADS = "LTE_THREADS"
FIXTURES = {"cornell": cornell_box, "two-room": two_room_scene, "lightbox": lightbox_scene}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------ plumbing

def thread_count():
    raw = os.environ.get(ENV_THREADS, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{ENV_THREADS}={raw!r} is not an integer") from None
    if n < 1:
        raise UsageError(f"{ENV_THREADS} must be >= 1, got {n}")
    return n


def chunked(fn, n, threads, min_chunk=64):
    """Run fn(start, stop) over [0, n) in contiguous ranges and concatenate in order."""
    if n == 0:
        return fn(0, 0)
    parts = max(1, min(threads, n // min_chunk))
    bounds = np.linspace(0, n, parts + 1).astype(int)
    if parts == 1:
        return fn(0, n)
    with ThreadPoolExecutor(parts) as ex:
        outs = list(ex.map(lambda i: fn(bounds[i], bounds[i + 1]), range(parts)))
    return np.concatenate(outs)


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def manifest_path(out):
    out = Path(out)
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def write_manifest(args, out, inputs, outputs, seeds, config_hash, t0):
    """Record what a command read and wrote; outputs are listed with content hashes."""
    flags = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    doc = {
        "command": args.command,
        "flags": flags,
        "config_hash": config_hash,
        "seeds": seeds,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": {str(p): file_digest(p) for p in outputs},
        "tool_version": lte.__version__,
        "threads": thread_count(),
        "wall_clock_s": round(time.time() - t0, 3),
    }
    path = manifest_path(out)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _write_image(path, image):
    path = Path(path)
    write_pfm(path, image)
    png = path.with_suffix(".png")
    write_png(png, image)
    return [path, png]


def _scene_id(path):
    return Path(path).stem


def _load_scenes(paths):
    return [(p, load_scene(p)) for p in paths]


def _flag_hash(**kw):
    return hashlib.sha256(json.dumps(kw, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _camera(scene, args):
    cam = scene.camera
    if getattr(args, "width", None) or getattr(args, "height", None):
        cam = cam.with_resolution(args.width or cam.width, args.height or cam.height)
    return cam


# ------------------------------------------------------------ commands

def cmd_gen(args):
    t0 = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    overrides = json.loads(Path(args.config).read_text()) if args.config else {}
    for i in range(args.count):
        seed = args.seed + i
        if args.fixture == "mini":
            cfg = dict(overrides, seed=seed)
            if args.clutter is not None:
                cfg["clutter"] = (args.clutter, args.clutter)
            cfg = {k: tuple(v) if isinstance(v, list) else v for k, v in cfg.items()}
            try:
                scene = generate_mini_scene(MiniSceneConfig(**cfg))
            except TypeError as e:
                raise UsageError(f"bad scene config: {e}") from None
            name = f"scene_{seed:05d}.json"
        else:
            scene = FIXTURES[args.fixture]()
            name = f"{args.fixture}.json" if args.count == 1 else f"{args.fixture}_{i:05d}.json"
        save_scene(scene, out / name)
        written.append(out / name)
    write_manifest(args, out, [Path(args.config)] if args.config else [], written,
                   {"seed": args.seed}, _flag_hash(fixture=args.fixture, **overrides), t0)
    print(f"wrote {len(written)} scene(s) to {out}")


def cmd_sample(args):
    from lte.training import Dataset, SceneRecord, save_dataset

    t0 = time.time()
    ds = Dataset(args.kind)
    for path, scene in _load_scenes(args.scene):
        cloud = sampling.sample_surface_points(scene, args.scene_points, seed=args.seed)
        queries = sampling.sample_query_points(scene, args.query_points, seed=args.seed)
        ds.add(SceneRecord(_scene_id(path), cloud, queries))
    save_dataset(args.out, ds)
    write_manifest(args, args.out, args.scene, [args.out], {"seed": args.seed},
                   _flag_hash(kind=args.kind, m=args.scene_points, n=args.query_points), t0)
    print(f"sampled {len(ds)} scene(s) -> {args.out}")


def cmd_bake(args):
    from lte.tracer.accel import build_bvh
    from lte.tracer.integrators import bake_irradiance, bake_radiance_grid
    from lte.training import Dataset, SceneRecord, load_dataset, save_dataset

    t0 = time.time()
    src = load_dataset(args.data)
    scenes = {_scene_id(p): s for p, s in _load_scenes(args.scene)}
    threads = thread_count()
    spp = args.spp or (16 if src.kind == "radiance" else 1024)
    out = Dataset(src.kind, grid_res=src.grid_res)
    for rec in src.records:
        if rec.scene_id not in scenes:
            raise SceneError(f"no --scene given for dataset scene {rec.scene_id!r}")
        accel = build_bvh(scenes[rec.scene_id])
        q = rec.queries
        if src.kind == "radiance":
            def job(s, e):
                return bake_radiance_grid(accel, q.positions[s:e], q.normals[s:e], spp_per_bin=spp,
                                          max_depth=args.max_depth, seed=args.seed, point_offset=s,
                                          res=src.grid_res)
        else:
            def job(s, e):
                return bake_irradiance(accel, q.positions[s:e], q.normals[s:e], rays_per_point=spp,
                                       max_depth=args.max_depth, seed=args.seed, point_offset=s,
                                       include_direct=src.kind == "irradiance")
        targets = chunked(job, len(q), threads)
        if not np.all(np.isfinite(targets)):
            raise FloatingPointError(f"scene {rec.scene_id}: non-finite baked targets")
        out.add(SceneRecord(rec.scene_id, rec.cloud, q.with_targets(targets.astype(np.float32))))
        log.info("baked %s: %d points", rec.scene_id, len(q))
    save_dataset(args.out, out)
    write_manifest(args, args.out, [args.data, *args.scene], [args.out], {"seed": args.seed},
                   _flag_hash(kind=src.kind, spp=spp, depth=args.max_depth), t0)
    print(f"baked {len(out)} scene(s) -> {args.out}")


def _model_config(args, kind):
    from lte.decoder import DecoderConfig
    from lte.encoder import EncoderConfig
    from lte.model import ModelConfig

    head = args.head or ("both" if kind == "radiance" else "irradiance")
    enc = EncoderConfig(dim=args.dim, knn=args.enc_knn, blocks=args.blocks, heads=args.heads, patch=args.patch)
    dec = DecoderConfig(dim=args.dim, kappa=args.knn, head=head)
    return ModelConfig(enc, dec, seed=args.seed, target=kind)


def cmd_train(args):
    from lte.training import Schedule, load_dataset, train

    t0 = time.time()
    ds = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    warmup = args.warmup if args.warmup is not None else min(1000, args.steps // 5)
    try:
        sched = Schedule(args.steps, args.lr, warmup, args.batch)
    except ValueError as e:
        raise UsageError(str(e)) from None
    cfg = _model_config(args, ds.kind)
    res = train(ds, cfg, sched, mode=args.mode, seed=args.seed, init_checkpoint=args.checkpoint,
                checkpoint_every=args.checkpoint_every, out_dir=out, loss_csv=out / "loss.csv",
                log_every=args.log_every)
    ckpt = out / "model.ltec"
    res.model.save(ckpt)
    outs = [ckpt, Path(str(ckpt) + ".json"), out / "loss.csv", *res.checkpoints]
    ins = [args.data] + ([args.checkpoint] if args.checkpoint else [])
    write_manifest(args, out, ins, outs, {"seed": args.seed}, res.model.config_hash(), t0)
    print(f"trained {args.steps} steps in {res.seconds:.1f}s, final loss {res.losses[-1]:.5f} -> {ckpt}")


def _load_model(path):
    from lte.model import LTEModel

    if not path:
        raise UsageError("--checkpoint is required (or use --oracle)")
    return LTEModel.load(path)


def cmd_render(args):
    from lte import pipeline

    t0 = time.time()
    scene = load_scene(args.scene)
    cam = _camera(scene, args)
    ins = [args.scene]
    target = args.kind
    if args.checkpoint:
        model = _load_model(args.checkpoint)
        target = model.config.target
        ins.append(args.checkpoint)
    elif not args.oracle:
        raise UsageError("render needs --checkpoint unless --oracle is given")
    target = "irradiance" if target == "radiance" else target
    if args.oracle:
        if args.full:
            img = pipeline.oracle_full_image(scene, cam, spp=args.spp or 64, seed=args.seed)
        else:
            img = pipeline.oracle_irradiance_image(scene, cam, rays=args.spp or 1024, seed=args.seed,
                                                   include_direct=target == "irradiance")
        chash = _flag_hash(oracle=True, full=args.full, target=target)
    else:
        cloud = sampling.sample_surface_points(scene, args.scene_points, seed=args.seed)
        img = pipeline.predicted_irradiance_image(model, cloud, scene, cam)
        if args.full:
            img = pipeline.compose_full(scene, cam, img, target=target, spp=args.spp or 16, seed=args.seed)
        chash = model.config_hash()
    if not np.all(np.isfinite(img)):
        raise FloatingPointError("non-finite pixels in rendered image")
    outs = _write_image(args.out, img)
    write_manifest(args, args.out, ins, outs, {"seed": args.seed}, chash, t0)
    print(f"rendered {cam.width}x{cam.height} -> {args.out}")


def cmd_eval(args):
    from lte import pipeline
    from lte.training import evaluate, load_dataset, split_probes

    t0 = time.time()
    model = _load_model(args.checkpoint)
    ds = load_dataset(args.data)
    if not ds.baked:
        raise SceneError(f"{args.data}: dataset is not baked")
    rest, probes = split_probes(ds, args.probes) if args.probes else (ds, None)
    images = {}
    for path in args.scene or []:
        scene = load_scene(path)
        cam = _camera(scene, args)
        cloud = next((r.cloud for r in ds.records if r.scene_id == _scene_id(path)), None)
        if cloud is None:
            cloud = sampling.sample_surface_points(scene, args.scene_points, seed=args.seed)
        pred = pipeline.predicted_irradiance_image(model, cloud, scene, cam)
        ref = pipeline.oracle_irradiance_image(scene, cam, rays=args.spp or 256, seed=args.seed,
                                               include_direct=model.config.target != "indirect")
        images[_scene_id(path)] = (pred, ref)
    rows = evaluate(model, rest, args.out, probes=probes, images=images)
    write_manifest(args, args.out, [args.checkpoint, args.data, *(args.scene or [])], [args.out],
                   {"seed": args.seed}, model.config_hash(), t0)
    for r in rows:
        if r["scene"] == "mean":
            print(f"{r['method']}: mse {r['mse']:.6g} psnr {r['psnr']:.3f}")


def _analytic_fixture(name):
    if name == "step":
        return lambda d: np.where(np.asarray(d)[:, 2] > 0.7, 1.0, 0.0)[:, None] * np.ones(3)
    if name == "smooth":
        return lambda d: (np.maximum(np.asarray(d)[:, 2], 0.0) ** 2 * (1 + 0.5 * np.asarray(d)[:, 0]))[:, None] \
            * np.ones(3)
    raise UsageError(f"unknown fixture {name!r}")


def cmd_sh_compare(args):
    from lte import sh
    from lte.training import load_dataset

    t0 = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        lmax = [int(x) for x in args.l_max.split(",")]
    except ValueError:
        raise UsageError(f"--l-max expects comma-separated integers, got {args.l_max!r}") from None
    ins = []
    if args.fixture:
        reference = _analytic_fixture(args.fixture)
        grid = np.asarray(reference(sh.grid_bin_centers(sh.GRID_RES).reshape(-1, 3))).reshape(
            sh.GRID_RES, sh.GRID_RES, 3)
    elif args.data:
        ds = load_dataset(args.data)
        if ds.kind != "radiance" or not ds.baked:
            raise SceneError(f"{args.data}: need a baked radiance-grid dataset")
        rec = ds.records[0]
        grid = reference = rec.queries.targets[args.point % len(rec.queries)].astype(np.float64)
        ins.append(args.data)
    elif args.scene:
        from lte.tracer.integrators import bake_radiance_grid

        scene = load_scene(args.scene)
        q = sampling.sample_query_points(scene, args.point + 1, seed=args.seed).take(slice(args.point, None))
        grid = reference = bake_radiance_grid(scene, q.positions, q.normals, spp_per_bin=args.spp or 64,
                                              seed=args.seed)[0]
        ins.append(args.scene)
    else:
        raise UsageError("sh-compare needs --scene, --data or --fixture")
    csv_path = out / "sh_error.csv"
    rows = sh.sh_error_curve(reference, lmax, csv_path)
    strip = sh.panel_strip(grid, lmax)
    outs = [csv_path] + _write_image(out / "panels.pfm", strip)
    write_manifest(args, out, ins, outs, {"seed": args.seed}, _flag_hash(l_max=lmax, fixture=args.fixture), t0)
    for r in rows:
        print(f"l_max {r[0]}: mse {np.mean(r[1:4]):.4g} overshoot {r[4]:.4g}")


def cmd_guide(args):
    from lte import guiding

    t0 = time.time()
    scene = load_scene(args.scene)
    cam = _camera(scene, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ins = [args.scene]
    if args.checkpoint:
        model = _load_model(args.checkpoint)
        if model.decoder.out_dir is None:
            raise CheckpointError(f"{args.checkpoint}: model has no directional head")
        cloud = sampling.sample_surface_points(scene, args.scene_points, seed=args.seed)
        grids = guiding.guidance_from_model(model, scene, cam, cloud)
        ins.append(args.checkpoint)
        chash = model.config_hash()
    else:
        grids = guiding.bake_guidance(scene, cam, spp_per_bin=args.bake_spp, seed=args.seed + 1)
        chash = _flag_hash(baked=args.bake_spp)
    g = guiding.guided_render(scene, cam, grids, spp=args.spp, mix_brdf=args.mix, seed=args.seed)
    b = guiding.guided_render(scene, cam, None, spp=args.spp, seed=args.seed)
    csv_path = out / "variance.csv"
    guiding.write_variance_csv(csv_path, g.variance, b.variance)
    outs = [csv_path] + _write_image(out / "guided.pfm", g.image) + _write_image(out / "brdf.pfm", b.image)
    write_manifest(args, out, ins, outs, {"seed": args.seed}, chash, t0)
    print(f"mean variance guided {g.variance.mean():.5g} brdf {b.variance.mean():.5g}")


def cmd_attn_dump(args):
    import csv

    from lte.encoder import attention_scores_dump

    t0 = time.time()
    model = _load_model(args.checkpoint) if args.checkpoint else None
    if model is None:
        from lte.model import LTEModel, ModelConfig

        model = LTEModel(ModelConfig(seed=args.seed))
    scene = load_scene(args.scene)
    cloud = sampling.sample_surface_points(scene, args.scene_points, seed=args.seed)
    plan = model.plan(cloud)
    if args.focus:
        try:
            focus = np.array([float(x) for x in args.focus.split(",")])
        except ValueError:
            raise UsageError(f"--focus expects x,y,z, got {args.focus!r}") from None
        if focus.shape != (3,):
            raise UsageError("--focus expects three coordinates")
    else:
        focus = scene.vertices[scene.emitter_mask()].reshape(-1, 3).mean(0)
    fa = int(sampling.knn(plan.anchors, focus[None], 1)[0][0, 0])
    model.encoder.retain = True
    model.encoder(plan)
    top = attention_scores_dump(model.encoder, plan, fa, top_n=args.top)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["rank", "anchor", "x", "y", "z", "score"])
        for rank, (a, s) in enumerate(top):
            x, y, z = plan.anchors[a]
            w.writerow([rank, a, f"{x:.6g}", f"{y:.6g}", f"{z:.6g}", f"{s:.9g}"])
    ins = [args.scene] + ([args.checkpoint] if args.checkpoint else [])
    write_manifest(args, args.out, ins, [args.out], {"seed": args.seed}, model.config_hash(), t0)
    print(f"focus anchor {fa}; wrote top {len(top)} -> {args.out}")


# ------------------------------------------------------------ parser

def build_parser():
    p = _Parser(prog="lte", description="Light-transport embedding toolkit.")
    p.add_argument("--version", action="version", version=f"lte {lte.__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True)
        return sp

    def res(sp):
        sp.add_argument("--width", type=int)
        sp.add_argument("--height", type=int)

    sp = cmd("gen", cmd_gen, "generate scene files")
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--fixture", choices=["mini", *FIXTURES], default="mini")
    sp.add_argument("--clutter", type=int)
    sp.add_argument("--config", help="JSON with generator overrides")

    sp = cmd("sample", cmd_sample, "sample scene point clouds and query points")
    sp.add_argument("--scene", action="append", required=True)
    sp.add_argument("--scene-points", type=int, default=20000)
    sp.add_argument("--query-points", type=int, default=20000)
    sp.add_argument("--kind", choices=["irradiance", "indirect", "radiance"], default="indirect")

    sp = cmd("bake", cmd_bake, "bake ground-truth targets with the path tracer")
    sp.add_argument("--data", required=True)
    sp.add_argument("--scene", action="append", required=True)
    sp.add_argument("--spp", type=int, help="rays per point (irradiance) or per bin (radiance)")
    sp.add_argument("--max-depth", type=int, default=5)

    sp = cmd("train", cmd_train, "train encoder and decoder")
    sp.add_argument("--data", required=True)
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--batch", type=int, default=8192)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--warmup", type=int)
    sp.add_argument("--knn", type=int, default=32, help="anchors per query in the decoder")
    sp.add_argument("--enc-knn", type=int, default=16)
    sp.add_argument("--dim", type=int, default=64)
    sp.add_argument("--blocks", type=int, default=4)
    sp.add_argument("--heads", type=int, default=4)
    sp.add_argument("--patch", type=int, default=256)
    sp.add_argument("--head", choices=["irradiance", "directional", "both"])
    sp.add_argument("--mode", choices=["scratch", "finetune_decoder"], default="scratch")
    sp.add_argument("--checkpoint", help="initial checkpoint")
    sp.add_argument("--checkpoint-every", type=int)
    sp.add_argument("--log-every", type=int, default=50)

    sp = cmd("render", cmd_render, "render a predicted (or traced) irradiance image")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--scene-points", type=int, default=20000)
    sp.add_argument("--spp", type=int)
    sp.add_argument("--full", action="store_true", help="direct light + albedo/pi * irradiance")
    sp.add_argument("--oracle", action="store_true", help="path-trace instead of predicting")
    sp.add_argument("--kind", choices=["irradiance", "indirect"], default="indirect",
                    help="oracle target when no checkpoint is given")
    res(sp)

    sp = cmd("eval", cmd_eval, "score a checkpoint on a baked dataset")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--probes", type=int, default=64, help="probes per scene for the IDW baseline (0: off)")
    sp.add_argument("--scene", action="append", help="also score rendered images of these scenes")
    sp.add_argument("--scene-points", type=int, default=20000)
    sp.add_argument("--spp", type=int)
    res(sp)

    sp = cmd("sh-compare", cmd_sh_compare, "spherical-harmonics error study on a radiance grid")
    sp.add_argument("--scene")
    sp.add_argument("--data")
    sp.add_argument("--fixture", choices=["step", "smooth"])
    sp.add_argument("--point", type=int, default=0)
    sp.add_argument("--spp", type=int)
    sp.add_argument("--l-max", default="1,2,4,6,8,10,12")

    sp = cmd("guide", cmd_guide, "guided vs BRDF-sampled renders with variance CSV")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--spp", type=int, default=2)
    sp.add_argument("--mix", type=float, default=0.5, help="BRDF probability in the sampling mixture")
    sp.add_argument("--bake-spp", type=int, default=16)
    sp.add_argument("--scene-points", type=int, default=20000)
    res(sp)

    sp = cmd("attn-dump", cmd_attn_dump, "top attention scores from a focus anchor")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--scene-points", type=int, default=20000)
    sp.add_argument("--focus", help="x,y,z (default: emitter centroid)")
    sp.add_argument("--top", type=int, default=200)
    return p


DATA_ERRORS = (SceneError, CheckpointError, ImageFormatError, EmbeddingFormatError, FileNotFoundError,
               IsADirectoryError, json.JSONDecodeError)


def main(argv=None):
    from lte.training import DatasetError, TrainingError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        thread_count()
        args.func(args)
        return EXIT_OK
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (*DATA_ERRORS, DatasetError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        # argument values that parse but are out of range
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
