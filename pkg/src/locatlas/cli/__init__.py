"""Command-line entry point: ``locatlas [options] COMMAND``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import atlas, hypermodel, metrics
from ..errors import ConfigError, LocAtlasError, SizeError, StateError
from ..geom import TriMesh
from ..shapes import SyntheticShape
from ..watertight import watertightness
from .config import Config, apply_overrides, describe_keys, dump_config, parse_config
from .formats import load_cloud, load_mesh, save_cloud, save_mesh
from .models import load_model_a, load_model_b, save_baseline, save_model_a, save_model_b

log = logging.getLogger("locatlas")

COMMANDS = ("synth", "train-a", "train-b", "reconstruct", "mesh", "generate", "interpolate", "fill", "wt",
            "eval-rec", "eval-gen", "baseline-atlas")


def _g(x) -> str:
    return "%.9g" % x


class Run:
    """Resolved paths and lazily loaded artifacts for one invocation."""

    def __init__(self, cfg: Config):
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.data = Path(cfg.data_dir) if cfg.data_dir else self.out / "data"
        self.ckpt_a = self.out / "model_a.ckpt"
        self.ckpt_b = self.out / "model_b.ckpt"

    def subdir(self, name) -> Path:
        p = self.out / name
        p.mkdir(parents=True, exist_ok=True)
        return p

    def clouds(self, directory: Path | None = None):
        directory = directory or self.data
        files = []
        for ext in (".xyz", ".ply", ".obj"):
            files = sorted(p for p in Path(directory).glob("*") if p.suffix.lower() == ext)
            if files:
                break
        if not files:
            raise SizeError(f"no point clouds found in {directory}")
        out = []
        for f in files:
            pts = load_cloud(f)
            out.append((f.stem, hypermodel.normalize_cloud(pts) if self.cfg.normalize else pts))
        return out

    def model_a(self):
        if not self.ckpt_a.exists():
            raise StateError(f"Part A checkpoint {self.ckpt_a} is missing; run train-a first")
        return load_model_a(self.ckpt_a)

    def model_b(self):
        if not self.ckpt_b.exists():
            raise StateError(f"Part B checkpoint {self.ckpt_b} is missing; run train-b first")
        return load_model_b(self.ckpt_b)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_synth(run: Run, args):
    cfg = run.cfg
    run.data.mkdir(parents=True, exist_ok=True)
    i = 0
    for kind in cfg.shape_kinds():
        for c in range(cfg.synth_count):
            shape = SyntheticShape(kind, n=cfg.synth_points, seed=cfg.seed * 10_000 + i)
            pts = shape.sample()
            if cfg.normalize:
                pts = hypermodel.normalize_cloud(pts)
            save_cloud(pts, run.data / f"{kind}_{c:03d}.xyz")
            i += 1
    print(f"wrote {i} clouds to {run.data}")


def cmd_train_a(run: Run, args):
    clouds = [c for _, c in run.clouds()]
    rows = []
    model = hypermodel.ModelA.create(run.cfg.seed, latent_dim=run.cfg.latent_dim)
    res = hypermodel.train_part_a(clouds, run.cfg.train_a(), model,
                                  log_fn=lambda e, l: rows.append((e, _g(l))))
    run.out.mkdir(parents=True, exist_ok=True)
    _write_csv(run.out / "train_a_log.csv", ["epoch", "loss"], rows)
    save_model_a(run.ckpt_a, res.model, res.prior)
    print(f"part A: loss {_g(res.losses[0])} -> {_g(res.losses[-1])}")


def cmd_train_b(run: Run, args):
    model_a, _ = run.model_a()
    clouds = [c for _, c in run.clouds()]
    rows = []
    res = atlas.train_part_b(model_a, clouds, run.cfg.train_b(), log_fn=lambda e, l: rows.append((e, _g(l))))
    _write_csv(run.out / "train_b_log.csv", ["epoch", "loss"], rows)
    save_model_b(run.ckpt_b, res.model)
    print(f"part B: loss {_g(res.losses[0])} -> {_g(res.losses[-1])}")


def cmd_reconstruct(run: Run, args):
    model_a, _ = run.model_a()
    out = run.subdir("reconstruct")
    for i, (name, cloud) in enumerate(run.clouds()):
        rec = hypermodel.reconstruct(model_a, cloud, run.cfg.reconstruct_points, [run.cfg.seed, i])
        save_cloud(rec, out / f"{name}.xyz")
    print(f"wrote reconstructions to {out}")


def _mesh_for(run: Run, model_a, model_b, z_or_cloud, mode=None, seed=0):
    cfg = run.cfg
    return atlas.assemble_mesh(model_a, model_b, z_or_cloud, mode or cfg.mesh_mode, cfg.mesh_sphere_resolution,
                               cfg.mesh_patch_resolution, cfg.mesh_weld_epsilon, cfg.mesh_patches, seed)


def _dump_patches(directory: Path, asm: atlas.Assembly):
    directory.mkdir(parents=True, exist_ok=True)
    for j, patch in enumerate(asm.patches):
        save_mesh(patch.mesh, directory / f"patch_{j:03d}.obj")
        with open(directory / f"patch_{j:03d}.json", "w") as fh:
            json.dump({"condition": [float(x) for x in patch.condition], "m": patch.m}, fh)


def cmd_mesh(run: Run, args):
    model_a, _ = run.model_a()
    model_b = run.model_b()
    mode = args.mode or run.cfg.mesh_mode
    out = run.subdir("mesh")
    for i, (name, cloud) in enumerate(run.clouds()):
        asm = _mesh_for(run, model_a, model_b, cloud, mode, seed=[run.cfg.seed, i])
        save_mesh(asm.mesh, out / f"{name}.obj")
        if mode == "soup" and run.cfg.mesh_dump_patches:
            _dump_patches(out / f"{name}_patches", asm)
        print(f"{name}: {asm.mesh.n_vertices} vertices, {asm.mesh.n_faces} faces ({mode})")


def _decoder_mesh(run: Run, model_a, model_b, z) -> TriMesh:
    if model_b is None:
        return hypermodel.sphere_mesh(model_a, z, run.cfg.mesh_sphere_resolution)
    return _mesh_for(run, model_a, model_b, z, "closed").mesh


def cmd_generate(run: Run, args):
    model_a, prior = run.model_a()
    model_b = run.model_b() if run.ckpt_b.exists() else None
    out = run.subdir("generate")
    for i in range(run.cfg.generate_count):
        z = hypermodel.sample_latent(prior, [run.cfg.seed, 100, i])
        save_cloud(hypermodel.reconstruct(model_a, z, run.cfg.reconstruct_points, [run.cfg.seed, 200, i]),
                   out / f"gen_{i:03d}.xyz")
        save_mesh(_decoder_mesh(run, model_a, model_b, z), out / f"gen_{i:03d}.obj")
    print(f"wrote {run.cfg.generate_count} generated shapes to {out}")


def cmd_interpolate(run: Run, args):
    model_a, _ = run.model_a()
    model_b = run.model_b() if run.ckpt_b.exists() else None
    clouds = run.clouds()
    z1 = hypermodel.encode(model_a, clouds[0][1])
    z2 = hypermodel.encode(model_a, clouds[min(1, len(clouds) - 1)][1])
    out = run.subdir("interpolate")
    for i, t in enumerate(np.linspace(0.0, 1.0, run.cfg.interpolate_steps)):
        z = hypermodel.interpolate(model_a, z1, z2, float(t))
        save_mesh(_decoder_mesh(run, model_a, model_b, z), out / f"interp_{i:03d}.obj")
    print(f"wrote {run.cfg.interpolate_steps} interpolated meshes to {out}")


def cmd_fill(run: Run, args):
    cfg = run.cfg
    model_a, _ = run.model_a()
    model_b = run.model_b()
    out = run.subdir("fill")
    for i, (name, cloud) in enumerate(run.clouds()):
        if args.mesh:
            mesh = load_mesh(args.mesh)
        else:
            mesh = _mesh_for(run, model_a, model_b, cloud, "soup", seed=[cfg.seed, i]).mesh
        res = atlas.adaptive_fill(mesh, model_a, model_b, cloud, cfg.fill_tau, cfg.fill_max_patches,
                                  cfg.mesh_patch_resolution, cfg.fill_reference_points, cfg.mesh_weld_epsilon,
                                  seed=[cfg.seed, 300, i])
        save_mesh(res.mesh, out / f"{name}.obj")
        with open(out / f"{name}.json", "w") as fh:
            json.dump({"added": res.added.tolist(), "max_gap": res.max_gap}, fh)
        print(f"{name}: added {len(res.added)} patches, max gap {_g(res.max_gap)}")


def cmd_wt(run: Run, args):
    paths = [Path(args.mesh)] if args.mesh else sorted((run.out / "mesh").glob("*.obj"))
    if not paths:
        raise SizeError("no meshes to evaluate")
    wcfg = run.cfg.wt()
    rows = []
    for p in paths:
        res = watertightness(load_mesh(p), wcfg)
        rows.append((p.name, "%.6f" % res.ratio, res.rays, res.degenerate, res.unresolved))
        print(f"WT {res.ratio:.6f}" + (f"  {p.name}" if len(paths) > 1 else ""))
        if run.cfg.wt_dump_csv or args.csv:
            dest = Path(args.csv) if args.csv and len(paths) == 1 else run.out / f"wt_rays_{p.stem}.csv"
            dest.parent.mkdir(parents=True, exist_ok=True)
            _write_csv(dest, ["ray", "ox", "oy", "oz", "dx", "dy", "dz", "crossings", "retries", "passed"], (
                (k, *map(_g, res.origins[k]), *map(_g, res.directions[k]), int(res.crossings[k]),
                 int(res.retries[k]), int(res.passed[k])) for k in range(res.rays)))
    if not args.mesh or args.summary:
        dest = Path(args.summary) if args.summary else run.out / "wt.csv"
        dest.parent.mkdir(parents=True, exist_ok=True)
        _write_csv(dest, ["mesh", "wt", "rays", "degenerate", "unresolved"], rows)


def _paired(run: Run, gen_dir, ref_dir):
    gen = run.clouds(Path(gen_dir))
    ref = run.clouds(Path(ref_dir))
    return gen, ref


def cmd_eval_rec(run: Run, args):
    gen, ref = _paired(run, args.gen or run.out / "reconstruct", args.ref or run.data)
    if [n for n, _ in gen] != [n for n, _ in ref]:
        raise SizeError("reconstruction and reference directories hold different cloud names")
    rows, cds, emds = [], [], []
    for (name, g), (_, r) in zip(gen, ref):
        cd, em = metrics.chamfer(g, r), metrics.emd(g, r)
        cds.append(cd)
        emds.append(em)
        rows.append((name, _g(cd), _g(em)))
    rows.append(("mean", _g(np.mean(cds)), _g(np.mean(emds))))
    run.out.mkdir(parents=True, exist_ok=True)
    _write_csv(run.out / "eval_rec.csv", ["cloud", "CD", "EMD"], rows)
    print(f"CD {_g(np.mean(cds))} EMD {_g(np.mean(emds))}")


def cmd_eval_gen(run: Run, args):
    gen, ref = _paired(run, args.gen or run.out / "generate", args.ref or run.data)
    g = [c for _, c in gen]
    r = [c for _, c in ref]
    d_cd = metrics.distance_matrix(g, r, "CD")
    d_emd = metrics.distance_matrix(g, r, "EMD")
    rows = [
        ("JSD", _g(metrics.jsd(g, r, run.cfg.eval_jsd_grid))),
        ("MMD-CD", _g(metrics.mmd(g, r, dists=d_cd))),
        ("MMD-EMD", _g(metrics.mmd(g, r, dists=d_emd))),
        ("COV-CD", _g(metrics.cov(g, r, dists=d_cd))),
        ("COV-EMD", _g(metrics.cov(g, r, dists=d_emd))),
    ]
    run.out.mkdir(parents=True, exist_ok=True)
    _write_csv(run.out / "eval_gen.csv", ["metric", "value"], rows)
    for k, v in rows:
        print(f"{k} {v}")


def cmd_baseline(run: Run, args):
    cfg = run.cfg
    out = run.subdir("baseline")
    for i, (name, cloud) in enumerate(run.clouds()):
        base, soup = atlas.discrete_atlas(cloud, cfg.baseline_patches, cfg.baseline_resolution, cfg.baseline_epochs,
                                          seed=cfg.seed * 10_000 + i, lr=cfg.baseline_lr)
        save_mesh(soup, out / f"{name}.obj")
        save_baseline(out / f"{name}.ckpt", base)
        print(f"{name}: discrete atlas loss {_g(base.losses[0])} -> {_g(base.losses[-1])}")


HANDLERS = {
    "synth": cmd_synth, "train-a": cmd_train_a, "train-b": cmd_train_b, "reconstruct": cmd_reconstruct,
    "mesh": cmd_mesh, "generate": cmd_generate, "interpolate": cmd_interpolate, "fill": cmd_fill,
    "wt": cmd_wt, "eval-rec": cmd_eval_rec, "eval-gen": cmd_eval_gen, "baseline-atlas": cmd_baseline,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="locatlas",
        description="Watertight meshes from point clouds with a locally conditioned atlas.",
        epilog=describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--config", help="configuration file of 'key = value' lines")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--dump-config", action="store_true", help="print the effective configuration and exit")
    p.add_argument("--threads", type=int, help="worker threads for ray casting")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    for name in COMMANDS:
        sp = sub.add_parser(name, help=HANDLERS[name].__name__.replace("cmd_", "").replace("_", " "))
        if name == "mesh":
            sp.add_argument("--mode", choices=("closed", "soup"))
        if name == "fill":
            sp.add_argument("--mesh", help="soup mesh to fill (default: assemble one)")
        if name == "wt":
            sp.add_argument("--mesh", help="mesh file (default: every OBJ in <out_dir>/mesh)")
            sp.add_argument("--csv", help="per-ray CSV destination")
            sp.add_argument("--summary", help="summary CSV destination")
        if name in ("eval-rec", "eval-gen"):
            sp.add_argument("--gen", help="generated/reconstructed cloud directory")
            sp.add_argument("--ref", help="reference cloud directory")
    return p


def load_config(args) -> Config:
    cfg = Config()
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise LocAtlasError(f"cannot read {args.config}: {exc}") from exc
        cfg = parse_config(text, source=args.config)
    cfg = apply_overrides(cfg, args.set)
    if args.threads is not None:
        cfg = apply_overrides(cfg, [f"threads = {args.threads}"])
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.dump_config:
            sys.stdout.write(dump_config(cfg))
            return 0
        if not args.command:
            parser.print_usage(sys.stderr)
            print("error: a command is required", file=sys.stderr)
            return 2
        HANDLERS[args.command](Run(cfg), args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return exc.code
    except LocAtlasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return 0


def run(command: str, config: Config, **options) -> int:
    """Programmatic equivalent of ``locatlas COMMAND`` with a ready Config."""
    if command not in HANDLERS:
        raise LocAtlasError(f"unknown command {command!r}")
    ns = argparse.Namespace(mode=None, mesh=None, csv=None, summary=None, gen=None, ref=None)
    for k, v in options.items():
        setattr(ns, k, v)
    try:
        HANDLERS[command](Run(config), ns)
    except LocAtlasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return 0
