"""Checkpoint (de)serialization of trained models."""

from __future__ import annotations

import numpy as np

from ..atlas import DiscreteAtlasBaseline, ModelB
from ..errors import CheckpointError
from ..hypermodel import LatentPrior, ModelA
from ..nn import MlpSpec
from .checkpoint import read_checkpoint, write_checkpoint


def save_model_a(path, model: ModelA, prior: LatentPrior | None = None) -> None:
    sections = {"encoder": model.encoder_params, "hyper": model.hyper_params}
    if prior is not None and prior.fitted:
        sections["prior_mean"] = prior.mean
        sections["prior_var"] = prior.var
    specs = {"encoder": model.encoder.describe(), "hyper": model.hyper.describe(), "target": model.target.describe()}
    write_checkpoint(path, "model_a", sections, specs)


def _expect(kind, want, path):
    if kind != want:
        raise CheckpointError(f"{path} holds a {kind!r} checkpoint, expected {want!r}")


def load_model_a(path):
    kind, sec, specs, _ = read_checkpoint(path)
    _expect(kind, "model_a", path)
    model = ModelA(
        MlpSpec.from_description(specs["encoder"]),
        MlpSpec.from_description(specs["hyper"]),
        MlpSpec.from_description(specs["target"]),
        sec["encoder"], sec["hyper"],
    )
    if model.encoder.n_params != len(model.encoder_params) or model.hyper.n_params != len(model.hyper_params):
        raise CheckpointError("parameter lengths do not match the stored specs")
    prior = LatentPrior(sec.get("prior_mean"), sec.get("prior_var"))
    return model, prior


def save_model_b(path, model: ModelB) -> None:
    write_checkpoint(path, "model_b", {"tphi": model.params},
                     {"tphi": model.tphi.describe(), "phi": model.phi.describe()})


def load_model_b(path) -> ModelB:
    kind, sec, specs, _ = read_checkpoint(path)
    _expect(kind, "model_b", path)
    tphi = MlpSpec.from_description(specs["tphi"])
    if tphi.n_params != len(sec["tphi"]):
        raise CheckpointError("parameter lengths do not match the stored specs")
    return ModelB(tphi, MlpSpec.from_description(specs["phi"]), sec["tphi"])


def save_baseline(path, base: DiscreteAtlasBaseline) -> None:
    write_checkpoint(path, "discrete_atlas", {"params": base.params}, {"phi": base.spec.describe()},
                     {"k_patches": base.k_patches})


def load_baseline(path) -> DiscreteAtlasBaseline:
    kind, sec, specs, meta = read_checkpoint(path)
    _expect(kind, "discrete_atlas", path)
    spec = MlpSpec.from_description(specs["phi"])
    return DiscreteAtlasBaseline(spec, np.asarray(sec["params"]).reshape(meta["k_patches"], spec.n_params))
