"""Parameter bookkeeping: tagged parameter sets, bundles, checkpoints.

A ModelParams wraps one network with its module tag and version; its checksum
is a SHA-256 over every parameter/buffer (sorted by name, shapes included),
so it changes iff any value changes. A SystemBundle is the five-slot system
(speech encoder, duration predictor, pitch predictor, speaker encoder,
generator) labeled SV-DSR or ASA-DSR.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch

from . import nets
from .checkpoint import load_arrays, save_arrays
from .errors import CheckpointError, ShapeError

TAG_SPEECH_ENCODER = "speech_encoder"
TAG_DURATION = "duration_predictor"
TAG_PITCH = "pitch_predictor"
TAG_SPEAKER = "speaker_encoder"
TAG_GENERATOR = "generator"
TAG_DISCRIMINATOR = "discriminator"

BUNDLE_SLOTS = (
    TAG_SPEECH_ENCODER,
    TAG_DURATION,
    TAG_PITCH,
    TAG_SPEAKER,
    TAG_GENERATOR,
)

LABEL_SV = "SV-DSR"
LABEL_ASA = "ASA-DSR"


@dataclass
class ModelParams:
    tag: str
    net: torch.nn.Module
    version: str = "1"

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name, tensor in sorted(self.net.state_dict().items()):
            arr = tensor.detach().cpu().numpy()
            digest.update(name.encode("utf-8"))
            digest.update(str(arr.shape).encode("utf-8"))
            digest.update(np.ascontiguousarray(arr).tobytes())
        return digest.hexdigest()

    def clone(self) -> "ModelParams":
        return ModelParams(self.tag, copy.deepcopy(self.net), self.version)

    def state_arrays(self, prefix: str = "") -> dict:
        return {
            f"{prefix}{name}": tensor.detach().cpu().numpy().copy()
            for name, tensor in self.net.state_dict().items()
        }

    def load_state_arrays(self, arrays: dict, prefix: str = "") -> None:
        state = {
            name: torch.from_numpy(np.array(arrays[f"{prefix}{name}"]))
            for name in self.net.state_dict()
        }
        self.net.load_state_dict(state)

    def freeze(self) -> None:
        for p in self.net.parameters():
            p.requires_grad_(False)

    def meta(self) -> dict:
        return {
            "tag": self.tag,
            "version": self.version,
            "class": type(self.net).__name__,
            "hparams": self.net.hparams,
            "checksum": self.checksum(),
        }


@dataclass
class SystemBundle:
    label: str
    speech_encoder: ModelParams
    duration_predictor: ModelParams
    pitch_predictor: ModelParams
    speaker_encoder: ModelParams
    generator: ModelParams

    def __post_init__(self):
        self.validate()

    def slot(self, name: str) -> ModelParams:
        return getattr(self, name)

    def slots(self) -> dict:
        return {name: getattr(self, name) for name in BUNDLE_SLOTS}

    def validate(self) -> None:
        if self.label not in (LABEL_SV, LABEL_ASA):
            raise ShapeError(f"unknown bundle label {self.label!r}")
        for name in BUNDLE_SLOTS:
            params = getattr(self, name)
            if params is None:
                raise ShapeError(f"bundle is missing the {name} slot")
            if params.tag != name:
                raise ShapeError(f"slot {name} holds a {params.tag} parameter set")
        n_phonemes = self.speech_encoder.net.n_phonemes
        for name in (TAG_DURATION, TAG_PITCH, TAG_GENERATOR):
            other = getattr(self, name).net.n_phonemes
            if other != n_phonemes:
                raise ShapeError(
                    f"{name} expects |P|={other}, speech encoder has {n_phonemes}"
                )
        if (
            self.generator.net.embedding_dim
            != self.speaker_encoder.net.embedding_dim
        ):
            raise ShapeError("generator/speaker-encoder embedding dims differ")
        if self.generator.net.n_mels_out != 80:
            raise ShapeError("generator must emit 80 mel bins")
        if self.speaker_encoder.net.n_mels != 40:
            raise ShapeError("speaker encoder must consume 40 mel bins")

    def checksums(self) -> dict:
        return {name: getattr(self, name).checksum() for name in BUNDLE_SLOTS}

    def clone(self, label: str | None = None) -> "SystemBundle":
        return SystemBundle(
            label=label or self.label,
            **{name: getattr(self, name).clone() for name in BUNDLE_SLOTS},
        )


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def save_component(params: ModelParams, path, extra_meta: dict | None = None) -> None:
    meta = {"kind": "component", "component": params.meta()}
    if extra_meta:
        meta["extra"] = extra_meta
    save_arrays(path, params.state_arrays("net."), meta)


def load_component(path) -> ModelParams:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "component":
        raise CheckpointError(f"{path}: not a component checkpoint")
    params = _rebuild(meta["component"], arrays, "net.")
    return params


def save_bundle(bundle: SystemBundle, path) -> None:
    arrays = {}
    meta = {"kind": "bundle", "label": bundle.label, "components": {}}
    for name, params in bundle.slots().items():
        arrays.update(params.state_arrays(f"{name}."))
        meta["components"][name] = params.meta()
    save_arrays(path, arrays, meta)


def load_bundle(path) -> SystemBundle:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "bundle":
        raise CheckpointError(f"{path}: not a bundle checkpoint")
    slots = {}
    for name in BUNDLE_SLOTS:
        if name not in meta["components"]:
            raise CheckpointError(f"{path}: bundle is missing the {name} slot")
        slots[name] = _rebuild(meta["components"][name], arrays, f"{name}.")
    return SystemBundle(label=meta["label"], **slots)


def _rebuild(component_meta: dict, arrays: dict, prefix: str) -> ModelParams:
    net = nets.build_net(component_meta["class"], component_meta["hparams"])
    params = ModelParams(
        tag=component_meta["tag"], net=net, version=component_meta["version"]
    )
    params.load_state_arrays(arrays, prefix)
    if params.checksum() != component_meta["checksum"]:
        raise CheckpointError(
            f"component {component_meta['tag']} checksum mismatch after load"
        )
    return params


# --------------------------------------------------------------------------
# Optimizer state (for exact training resume)
# --------------------------------------------------------------------------


def optimizer_state_arrays(optimizer: torch.optim.Optimizer) -> tuple[dict, dict]:
    """Flatten optimizer.state_dict() into named arrays + scalar metadata."""
    state = optimizer.state_dict()["state"]
    arrays = {}
    scalars = {}
    for idx, entry in state.items():
        for key, value in entry.items():
            name = f"opt.{idx}.{key}"
            if isinstance(value, torch.Tensor):
                arrays[name] = value.detach().cpu().numpy().copy()
            else:
                scalars[name] = value
    return arrays, scalars


def restore_optimizer_state(
    optimizer: torch.optim.Optimizer, arrays: dict, scalars: dict
) -> None:
    state: dict[int, dict] = {}
    for name, arr in arrays.items():
        if not name.startswith("opt."):
            continue
        _, idx, key = name.split(".", 2)
        state.setdefault(int(idx), {})[key] = torch.from_numpy(np.array(arr))
    for name, value in scalars.items():
        _, idx, key = name.split(".", 2)
        state.setdefault(int(idx), {})[key] = value
    groups = optimizer.state_dict()["param_groups"]
    optimizer.load_state_dict({"state": state, "param_groups": groups})
