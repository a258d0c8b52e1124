"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from ..atlas import TrainBConfig
from ..errors import ConfigError
from ..hypermodel import TrainAConfig
from ..watertight import WtConfig


def _opt(default, help):
    return field(default=default, metadata={"help": help})


@dataclass
class Config:
    out_dir: str = _opt("run", "directory receiving every artifact")
    data_dir: str = _opt("", "input cloud directory (empty: <out_dir>/data)")
    seed: int = _opt(0, "base seed for synthesis and sampling")
    threads: int = _opt(1, "worker threads for ray casting")
    normalize: bool = _opt(True, "center clouds and scale them into the 0.9 ball on load")

    synth_shapes: str = _opt("torus", "comma-separated shape kinds: sphere, torus, box, cylinder")
    synth_count: int = _opt(1, "clouds per shape kind")
    synth_points: int = _opt(512, "points per synthetic cloud")

    train_a_epochs: int = _opt(200, "Part A epochs")
    train_a_batch_size: int = _opt(8, "Part A clouds per Adam step")
    train_a_lr: float = _opt(1e-3, "Part A learning rate")
    train_a_prior_samples: int = _opt(512, "sphere samples decoded per cloud per step")
    train_a_loss: str = _opt("CD", "Part A reconstruction loss: CD or EMD")
    latent_dim: int = _opt(128, "embedding size")

    train_b_k: int = _opt(16, "neighbourhood size for patch targets")
    train_b_lam: float = _opt(1e-4, "edge-length regularizer weight")
    train_b_uv_samples: int = _opt(32, "random UV samples per patch per step")
    train_b_patches: int = _opt(64, "condition points per cloud per step")
    train_b_epochs: int = _opt(300, "Part B epochs")
    train_b_lr: float = _opt(1e-3, "Part B learning rate")
    train_b_neighbors_from: str = _opt("input", "neighbourhood source: input or reconstruction")

    reconstruct_points: int = _opt(512, "points per reconstructed cloud")

    mesh_mode: str = _opt("closed", "assembly mode: closed or soup")
    mesh_sphere_resolution: int = _opt(8, "quad-sphere vertices per cube edge (closed mode)")
    mesh_patch_resolution: int = _opt(4, "UV grid resolution per patch / refined quad")
    mesh_patches: int = _opt(64, "patches in soup mode")
    mesh_weld_epsilon: float = _opt(0.0, "weld tolerance in soup mode")
    mesh_dump_patches: bool = _opt(False, "write per-patch OBJ files with JSON sidecars (soup mode)")

    fill_tau: float = _opt(0.05, "largest tolerated gap between reference points and mesh vertices")
    fill_max_patches: int = _opt(32, "patch budget for hole filling")
    fill_reference_points: int = _opt(2048, "reference points used to find gaps")

    generate_count: int = _opt(4, "shapes drawn from the latent prior")
    interpolate_steps: int = _opt(5, "interpolation steps between the first two clouds")

    wt_rays: int = _opt(100_000, "rays cast per watertightness evaluation")
    wt_seed: int = _opt(0, "ray sampling seed")
    wt_perturb_angle: float = _opt(1e-4, "largest direction perturbation for degenerate rays (rad)")
    wt_origin_offset: float = _opt(2.0, "ray origin distance from the center in bounding radii")
    wt_surface_origin: bool = _opt(False, "start rays on the surface instead of outside the mesh")
    wt_dump_csv: bool = _opt(False, "write the per-ray CSV next to the WT summary")

    eval_jsd_grid: int = _opt(28, "JSD voxel grid resolution")

    baseline_patches: int = _opt(25, "discrete-atlas patch count")
    baseline_epochs: int = _opt(500, "discrete-atlas epochs")
    baseline_resolution: int = _opt(5, "discrete-atlas UV grid resolution for meshing")
    baseline_lr: float = _opt(1e-3, "discrete-atlas learning rate")

    def train_a(self) -> TrainAConfig:
        return TrainAConfig(self.train_a_epochs, self.train_a_batch_size, self.train_a_lr,
                            self.train_a_prior_samples, self.seed, self.train_a_loss)

    def train_b(self) -> TrainBConfig:
        return TrainBConfig(self.train_b_k, self.train_b_lam, self.train_b_uv_samples, self.train_b_patches,
                            self.train_b_epochs, self.train_b_lr, self.seed, self.train_b_neighbors_from)

    def wt(self) -> WtConfig:
        return WtConfig(self.wt_rays, self.wt_seed, self.wt_perturb_angle, self.wt_origin_offset,
                        surface_origin=self.wt_surface_origin, threads=self.threads)

    def validate(self) -> list[str]:
        problems = []
        positive = [f.name for f in fields(self) if f.type in ("int", "float") and not f.name.endswith(
            ("seed", "epsilon", "lam"))]
        for name in positive:
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if self.mesh_weld_epsilon < 0:
            problems.append("mesh_weld_epsilon must be non-negative")
        if self.train_b_lam < 0:
            problems.append("train_b_lam must be non-negative")
        if self.train_a_loss not in ("CD", "EMD"):
            problems.append("train_a_loss must be CD or EMD")
        if self.mesh_mode not in ("closed", "soup"):
            problems.append("mesh_mode must be closed or soup")
        if self.train_b_neighbors_from not in ("input", "reconstruction"):
            problems.append("train_b_neighbors_from must be input or reconstruction")
        if self.train_b_k < 3:
            problems.append("train_b_k must be at least 3")
        for res in ("mesh_sphere_resolution", "mesh_patch_resolution", "baseline_resolution"):
            if getattr(self, res) < 2:
                problems.append(f"{res} must be at least 2")
        from ..shapes import KINDS

        for kind in self.shape_kinds():
            if kind not in KINDS:
                problems.append(f"synth_shapes: unknown kind {kind!r}")
        return problems

    def shape_kinds(self) -> list[str]:
        return [s.strip() for s in self.synth_shapes.split(",") if s.strip()]


def _convert(f, raw: str):
    if f.type == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if f.type == "int":
        return int(raw)
    if f.type == "float":
        return float(raw)
    return raw


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text: str, base: Config | None = None, source: str = "config") -> Config:
    """Parse ``key = value`` lines; every problem is collected before raising."""
    cfg = dataclasses.replace(base) if base else Config()
    known = {f.name: f for f in fields(Config)}
    problems = []
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"{source}:{no}: expected 'key = value'")
            continue
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            problems.append(f"{source}:{no}: unknown key {key!r}")
            continue
        try:
            setattr(cfg, key, _convert(known[key], raw))
        except ValueError as exc:
            problems.append(f"{source}:{no}: {key}: {exc}")
    problems += cfg.validate()
    if problems:
        raise ConfigError(problems)
    return cfg


def apply_overrides(cfg: Config, pairs) -> Config:
    return parse_config("\n".join(pairs), cfg, source="--set") if pairs else cfg


def dump_config(cfg: Config) -> str:
    return "".join(f"{f.name} = {format_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


def describe_keys() -> str:
    rows = [f"  {f.name} = {format_value(f.default)}\n      {f.metadata['help']}" for f in fields(Config)]
    return "configuration keys (defaults shown):\n" + "\n".join(rows)
