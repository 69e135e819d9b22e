"""Stage-wise training for all system components, plus reconstruction.

Every stage is deterministic: model init comes from the stage seed, the batch
drawn at step t depends only on (seed, t), and optimizer state is part of the
saved training state, so (train k, save, load, train j) matches an unbroken
(k + j)-step run exactly. Loss traces are floats, one per executed step.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import features as ft
from .checkpoint import load_arrays, save_arrays
from .config import StageConfig
from .corpus import frame_config
from .data import FeatureStore
from .errors import CheckpointError, ConfigError, CorpusError, EmptyInputError
from .losses import generation_loss
from .nets import (
    DurationPredictor,
    Ge2eLoss,
    Generator,
    PitchPredictor,
    SpeakerEncoder,
    SpeechEncoder,
    build_net,
    expand_by_duration,
    seed_init,
)
from .nets.discriminator import crop_or_tile
from .params import (
    TAG_DURATION,
    TAG_GENERATOR,
    TAG_PITCH,
    TAG_SPEAKER,
    TAG_SPEECH_ENCODER,
    ModelParams,
    SystemBundle,
    optimizer_state_arrays,
    restore_optimizer_state,
)

AUX_CLASSES = {"Ge2eLoss": Ge2eLoss}


@dataclass
class TrainReport:
    stage: str
    losses: list[float]
    wall_seconds: float
    checkpoint: str | None = None
    extras: dict = field(default_factory=dict)


@dataclass
class TrainState:
    params: ModelParams
    optimizer: torch.optim.Optimizer
    step: int
    aux: dict = field(default_factory=dict)

    def trainable_parameters(self) -> list:
        out = list(self.params.net.parameters())
        for name in sorted(self.aux):
            out.extend(self.aux[name].parameters())
        return out


def make_optimizer(cfg: StageConfig, parameters) -> torch.optim.Optimizer:
    if cfg.optimizer == "adadelta":
        return torch.optim.Adadelta(
            parameters, lr=cfg.learning_rate, rho=0.95, eps=1e-6
        )
    if cfg.optimizer == "adam":
        return torch.optim.Adam(
            parameters, lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8
        )
    raise ConfigError(f"unknown optimizer {cfg.optimizer!r}")


def save_train_state(path, state: TrainState) -> None:
    arrays = state.params.state_arrays("net.")
    opt_arrays, opt_scalars = optimizer_state_arrays(state.optimizer)
    arrays.update(opt_arrays)
    aux_meta = {}
    for name in sorted(state.aux):
        module = state.aux[name]
        aux_meta[name] = {"class": type(module).__name__}
        for key, tensor in module.state_dict().items():
            arrays[f"aux.{name}.{key}"] = tensor.detach().cpu().numpy().copy()
    meta = {
        "kind": "train_state",
        "step": state.step,
        "component": state.params.meta(),
        "aux": aux_meta,
        "opt_scalars": opt_scalars,
    }
    save_arrays(path, arrays, meta)


def load_train_state(path, cfg: StageConfig) -> TrainState:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "train_state":
        raise CheckpointError(f"{path}: not a training-state checkpoint")
    component = meta["component"]
    net = build_net(component["class"], component["hparams"])
    params = ModelParams(component["tag"], net, component["version"])
    params.load_state_arrays(arrays, "net.")
    aux = {}
    for name in sorted(meta.get("aux", {})):
        cls = AUX_CLASSES[meta["aux"][name]["class"]]
        module = cls()
        module.load_state_dict(
            {
                key: torch.from_numpy(arrays[f"aux.{name}.{key}"])
                for key in module.state_dict()
            }
        )
        aux[name] = module
    state = TrainState(params=params, optimizer=None, step=int(meta["step"]), aux=aux)
    state.optimizer = make_optimizer(cfg, state.trainable_parameters())
    restore_optimizer_state(state.optimizer, arrays, meta.get("opt_scalars", {}))
    return state


def write_report(report: TrainReport, path, columns=("loss",)) -> None:
    """Line-delimited stage records: step, loss column(s), timestamp."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y-%m-%dT%H:%M:%S")
    with open(path, "w", encoding="utf-8") as fh:
        for step, value in enumerate(report.losses):
            row = {"step": step}
            if isinstance(value, dict):
                row.update({k: value[k] for k in columns})
            else:
                row[columns[0]] = value
            row["ts"] = stamp
            fh.write(json.dumps(row) + "\n")


# --------------------------------------------------------------------------
# Sequence cross-entropy for the speech encoder
# --------------------------------------------------------------------------


def _pad_batch(feats: list[torch.Tensor], labels: list[list[int]], eos_id: int):
    batch = len(feats)
    t_max = max(f.shape[0] for f in feats)
    l_max = max(len(l) for l in labels)
    feat_pad = torch.zeros(batch, t_max, feats[0].shape[1], dtype=torch.float64)
    lengths = torch.zeros(batch, dtype=torch.long)
    label_pad = torch.zeros(batch, l_max, dtype=torch.long)
    label_lengths = torch.zeros(batch, dtype=torch.long)
    targets = torch.full((batch, l_max + 1), -100, dtype=torch.long)
    for b, (f, l) in enumerate(zip(feats, labels)):
        feat_pad[b, : f.shape[0]] = f
        lengths[b] = f.shape[0]
        label_pad[b, : len(l)] = torch.tensor(l, dtype=torch.long)
        label_lengths[b] = len(l)
        targets[b, : len(l)] = torch.tensor(l, dtype=torch.long)
        targets[b, len(l)] = eos_id
    return feat_pad, lengths, label_pad, label_lengths, targets


def sequence_ce_loss(net: SpeechEncoder, feats, labels, eos_id: int) -> torch.Tensor:
    feat_pad, lengths, label_pad, label_lengths, targets = _pad_batch(
        feats, labels, eos_id
    )
    logits = net.teacher_logits(feat_pad, lengths, label_pad, label_lengths)
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), ignore_index=-100
    )


def _choose(rng: np.random.Generator, n_pool: int, batch: int) -> np.ndarray:
    return rng.choice(n_pool, size=batch, replace=n_pool < batch)


def _run_steps(state: TrainState, cfg: StageConfig, step_fn, post_step=None):
    """Shared seeded training loop; returns (loss trace, wall seconds)."""
    trace = []
    t0 = time.time()
    for step in range(state.step, cfg.steps):
        rng = np.random.default_rng([cfg.seed, step])
        loss = step_fn(rng)
        state.optimizer.zero_grad()
        loss.backward()
        state.optimizer.step()
        if post_step is not None:
            post_step()
        trace.append(float(loss.detach()))
        state.step = step + 1
    return trace, time.time() - t0


# --------------------------------------------------------------------------
# Stage 1: speech encoder pretraining (healthy multi-speaker corpus)
# --------------------------------------------------------------------------


def pretrain_speech_encoder(
    store: FeatureStore,
    cfg: StageConfig,
    model: dict,
    resume: TrainState | None = None,
) -> tuple[ModelParams, TrainReport, TrainState]:
    entries = store.entries(role="healthy", split="train")
    if not entries:
        raise CorpusError("no healthy utterances to pretrain on")
    if resume is None:
        net = SpeechEncoder(
            n_phonemes=store.inventory.size, width=model["speech_width"]
        )
        seed_init(net, cfg.seed)
        params = ModelParams(TAG_SPEECH_ENCODER, net)
        state = TrainState(params, make_optimizer(cfg, net.parameters()), 0)
    else:
        state = resume
    trace, wall = _train_seq2seq(state, store, entries, cfg)
    report = TrainReport("pretrain", trace, wall_seconds=wall)
    return state.params, report, state


def finetune_speech_encoder(
    phi_p: ModelParams,
    store: FeatureStore,
    entries,
    cfg: StageConfig,
    resume: TrainState | None = None,
) -> tuple[ModelParams, TrainReport, TrainState]:
    """Fine-tune a copy of the pretrained encoder on one speaker's data."""
    speakers = {e.speaker for e in entries}
    if len(speakers) != 1:
        raise CorpusError(
            f"fine-tuning corpus must hold exactly one speaker, got {sorted(speakers)}"
        )
    if not entries:
        raise CorpusError("empty fine-tuning corpus")
    if resume is None:
        params = ModelParams(TAG_SPEECH_ENCODER, copy.deepcopy(phi_p.net))
        state = TrainState(params, make_optimizer(cfg, params.net.parameters()), 0)
    else:
        state = resume
    trace, wall = _train_seq2seq(state, store, list(entries), cfg)
    report = TrainReport("finetune", trace, wall_seconds=wall)
    return state.params, report, state


def _train_seq2seq(state, store, entries, cfg):
    ids = [e.utt_id for e in entries]
    eos = store.inventory.eos_id

    def step_fn(rng):
        chosen = _choose(rng, len(ids), cfg.batch_size)
        feats = [store.feat120n(ids[i]) for i in chosen]
        labels = [store.label_ids(ids[i]) for i in chosen]
        return sequence_ce_loss(state.params.net, feats, labels, eos)

    return _run_steps(state, cfg, step_fn)


# --------------------------------------------------------------------------
# Stage 2: prosody corrector (single reference speaker, ground-truth prosody)
# --------------------------------------------------------------------------


def _aligned_rows_no_grad(net: SpeechEncoder, feat, label_ids):
    with torch.no_grad():
        return net.aligned_rows(feat, label_ids)


def prepare_prosody_examples(store: FeatureStore, phi_p: ModelParams, entries):
    """Per utterance: posterior rows, gold durations, frame-wise pitch target."""
    examples = []
    for e in entries:
        rec = store.record(e.utt_id)
        if rec.durations.size == 0:
            raise CorpusError(f"{e.utt_id}: missing alignment durations")
        rows = _aligned_rows_no_grad(
            phi_p.net, store.feat120n(e.utt_id), store.label_ids(e.utt_id)
        )
        examples.append(
            {
                "utt_id": e.utt_id,
                "rows": rows,
                "log_durations": torch.log(store.durations(e.utt_id).double()),
                "durations": store.durations(e.utt_id),
                "pitch_target": store.logf0n(e.utt_id),
            }
        )
    return examples


def train_prosody_corrector(
    store: FeatureStore,
    phi_p: ModelParams,
    cfg_duration: StageConfig,
    cfg_pitch: StageConfig,
    model: dict,
    resume_duration: TrainState | None = None,
    resume_pitch: TrainState | None = None,
):
    """Train duration then pitch predictors on the prosody-reference speaker."""
    entries = store.entries(role="prosody_reference", split="train")
    if not entries:
        raise CorpusError("no prosody_reference utterances")
    speakers = {e.speaker for e in entries}
    if len(speakers) != 1:
        raise CorpusError(f"expected one reference speaker, got {sorted(speakers)}")
    examples = prepare_prosody_examples(store, phi_p, entries)

    if resume_duration is None:
        dur_net = DurationPredictor(store.inventory.size, width=model["predictor_width"])
        seed_init(dur_net, cfg_duration.seed)
        dur_state = TrainState(
            ModelParams(TAG_DURATION, dur_net),
            make_optimizer(cfg_duration, dur_net.parameters()),
            0,
        )
    else:
        dur_state = resume_duration

    def duration_step(rng):
        chosen = _choose(rng, len(examples), cfg_duration.batch_size)
        losses = []
        for i in chosen:
            ex = examples[i]
            pred = dur_state.params.net(ex["rows"])
            losses.append(F.mse_loss(pred, ex["log_durations"]))
        return torch.stack(losses).mean()

    dur_trace, dur_wall = _run_steps(dur_state, cfg_duration, duration_step)

    if resume_pitch is None:
        pitch_net = PitchPredictor(store.inventory.size, width=model["predictor_width"])
        seed_init(pitch_net, cfg_pitch.seed)
        pitch_state = TrainState(
            ModelParams(TAG_PITCH, pitch_net),
            make_optimizer(cfg_pitch, pitch_net.parameters()),
            0,
        )
    else:
        pitch_state = resume_pitch

    def pitch_step(rng):
        chosen = _choose(rng, len(examples), cfg_pitch.batch_size)
        losses = []
        for i in chosen:
            ex = examples[i]
            expanded = expand_by_duration(ex["rows"], ex["durations"])
            pred = pitch_state.params.net(expanded)
            losses.append(F.mse_loss(pred, ex["pitch_target"]))
        return torch.stack(losses).mean()

    pitch_trace, pitch_wall = _run_steps(pitch_state, cfg_pitch, pitch_step)

    return (
        dur_state.params,
        pitch_state.params,
        TrainReport("duration", dur_trace, dur_wall),
        TrainReport("pitch", pitch_trace, pitch_wall),
        dur_state,
        pitch_state,
    )


# --------------------------------------------------------------------------
# Stage 3: speaker encoder on the speaker-verification task
# --------------------------------------------------------------------------


def train_speaker_encoder(
    store: FeatureStore,
    cfg: StageConfig,
    model: dict,
    n_speakers: int = 4,
    m_utts: int = 4,
    crop_frames: int = 64,
    resume: TrainState | None = None,
) -> tuple[ModelParams, TrainReport, TrainState]:
    if n_speakers * m_utts != cfg.batch_size:
        raise ConfigError(
            f"speaker stage batch_size {cfg.batch_size} != "
            f"{n_speakers} speakers x {m_utts} utterances"
        )
    pools = {}
    for e in store.entries(role="healthy", split="train"):
        pools.setdefault(e.speaker, []).append(e.utt_id)
    speakers = sorted(s for s, utts in pools.items() if len(utts) >= m_utts)
    if len(speakers) < n_speakers:
        raise CorpusError(
            f"need {n_speakers} speakers with >= {m_utts} utterances, "
            f"found {len(speakers)}"
        )
    if resume is None:
        net = SpeakerEncoder(
            hidden=model["speaker_hidden"],
            layers=model["speaker_layers"],
            embedding_dim=model["embedding_dim"],
        )
        seed_init(net, cfg.seed)
        ge2e = Ge2eLoss()
        state = TrainState(
            ModelParams(TAG_SPEAKER, net), None, 0, aux={"ge2e": ge2e}
        )
        state.optimizer = make_optimizer(cfg, state.trainable_parameters())
    else:
        state = resume

    def step_fn(rng):
        spk_pick = rng.choice(len(speakers), size=n_speakers, replace=False)
        crops = []
        for s in spk_pick:
            utts = pools[speakers[s]]
            utt_pick = rng.choice(len(utts), size=m_utts, replace=False)
            for u in utt_pick:
                mel = store.mel40n(utts[u])
                offset = int(rng.integers(0, max(1, mel.shape[0] - crop_frames + 1)))
                crops.append(crop_or_tile(mel, crop_frames, offset))
        batch = torch.stack(crops)
        embeddings = state.params.net(batch).view(n_speakers, m_utts, -1)
        return state.aux["ge2e"](embeddings)

    trace, wall = _run_steps(state, cfg, step_fn, post_step=state.aux["ge2e"].clamp_w)
    return state.params, TrainReport("speaker", trace, wall), state


# --------------------------------------------------------------------------
# Stage 4: speech generator (frozen speaker encoder, ground-truth prosody)
# --------------------------------------------------------------------------


def build_generation_example(
    store: FeatureStore,
    utt_id: str,
    speech_encoder: ModelParams,
    speaker_encoder: ModelParams,
):
    """(p, v, e, m) exactly as the generator consumes them in training."""
    rec = store.record(utt_id)
    if rec.durations.size == 0:
        raise CorpusError(f"{utt_id}: missing alignment durations")
    rows = _aligned_rows_no_grad(
        speech_encoder.net, store.feat120n(utt_id), store.label_ids(utt_id)
    )
    p = expand_by_duration(rows, store.durations(utt_id))
    v = store.logf0n(utt_id)
    with torch.no_grad():
        e = speaker_encoder.net.embed(store.mel40n(utt_id))
    m = store.mel80n(utt_id)
    if p.shape[0] != m.shape[0]:
        raise CorpusError(f"{utt_id}: expanded rows do not cover the mel frames")
    return {"utt_id": utt_id, "p": p, "v": v, "e": e, "m": m}


def train_generator(
    store: FeatureStore,
    phi_p: ModelParams,
    speaker_sv: ModelParams,
    cfg: StageConfig,
    model: dict,
    resume: TrainState | None = None,
) -> tuple[ModelParams, TrainReport, TrainState]:
    entries = store.entries(role="healthy", split="train")
    if not entries:
        raise CorpusError("no healthy utterances to train the generator on")
    speaker_sv.freeze()
    checksum_before = speaker_sv.checksum()
    examples = [
        build_generation_example(store, e.utt_id, phi_p, speaker_sv)
        for e in entries
    ]
    if resume is None:
        net = Generator(
            n_phonemes=store.inventory.size,
            embedding_dim=speaker_sv.net.embedding_dim,
            width=model["generator_width"],
        )
        seed_init(net, cfg.seed)
        state = TrainState(
            ModelParams(TAG_GENERATOR, net),
            None,
            0,
        )
        state.optimizer = make_optimizer(cfg, net.parameters())
    else:
        state = resume

    def step_fn(rng):
        chosen = _choose(rng, len(examples), cfg.batch_size)
        losses = []
        for i in chosen:
            ex = examples[i]
            z = state.params.net(ex["p"], ex["v"], ex["e"])
            losses.append(generation_loss(z, ex["m"]))
        return torch.stack(losses).mean()

    trace, wall = _run_steps(state, cfg, step_fn)
    report = TrainReport("generator", trace, wall)
    report.extras["speaker_encoder_frozen"] = speaker_sv.checksum() == checksum_before
    return state.params, report, state


# --------------------------------------------------------------------------
# Reconstruction
# --------------------------------------------------------------------------

MODES = ("GG", "GP", "PP")


@dataclass
class Reconstruction:
    utt_id: str
    mode: str
    mel_norm: np.ndarray
    mel: np.ndarray
    phoneme_ids: list[int]
    durations: np.ndarray
    wav: ft.Waveform | None = None


def reconstruct(
    store: FeatureStore,
    utt_id: str,
    bundle: SystemBundle,
    mode: str = "PP",
    with_wav: bool = False,
) -> Reconstruction:
    """Run the full reconstruction path for one utterance.

    PP uses predicted duration and predicted F0 (the full pipeline); GP uses
    ground-truth duration with predicted F0; GG uses both ground truths and
    therefore requires an alignment.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    inv = store.inventory
    feat = store.feat120n(utt_id)
    with torch.no_grad():
        if mode == "PP":
            ids, rows = bundle.speech_encoder.net.decode_greedy(feat, inv.eos_id)
            if not ids:
                raise EmptyInputError(f"{utt_id}: decoder emitted an empty sequence")
            durations = bundle.duration_predictor.net.predict_frames(rows)
        else:
            rec = store.record(utt_id)
            if rec.durations.size == 0:
                raise CorpusError(f"{utt_id}: {mode} mode requires an alignment")
            ids = store.label_ids(utt_id)
            rows = bundle.speech_encoder.net.aligned_rows(feat, ids)
            durations = store.durations(utt_id)
        p = expand_by_duration(rows, durations)
        if mode == "GG":
            v = store.logf0n(utt_id)
        else:
            v = bundle.pitch_predictor.net(p)
        e = bundle.speaker_encoder.net.embed(store.mel40n(utt_id))
        z = bundle.generator.net(p, v, e)
    mel_norm = z.numpy()
    mel = ft.denormalize(mel_norm, store.stats.mel80)
    wav = None
    if with_wav:
        wav = ft.griffin_lim(mel, frame_config(80))
    return Reconstruction(
        utt_id=utt_id,
        mode=mode,
        mel_norm=mel_norm,
        mel=mel,
        phoneme_ids=list(ids),
        durations=np.asarray(durations, dtype=np.int64),
        wav=wav,
    )
