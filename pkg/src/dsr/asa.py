"""Adversarial speaker adaptation: clone the SV system, then alternately
update the adapted speaker encoder (multi-task loss) and a system
discriminator, with every other component frozen.

Two gradient routes are provided for the speaker-encoder update and must
agree: the explicit two-term objective L_adapt - lambda * L_dis, and a single
pass where the discriminator input is wrapped in a gradient-reversal layer.
The discriminator always takes one plain minimization step on L_dis first
(1:1 alternation).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import load_arrays, save_arrays
from .config import StageConfig
from .data import FeatureStore
from .errors import CheckpointError, CorpusError, FrozenParameterError
from .losses import adaptation_loss, discrimination_loss_logits, mtl_loss
from .nets import Discriminator, build_net, expand_by_duration, grl, seed_init
from .nets.discriminator import crop_or_tile
from .params import (
    LABEL_ASA,
    TAG_DISCRIMINATOR,
    ModelParams,
    SystemBundle,
    optimizer_state_arrays,
    restore_optimizer_state,
)
from .training import TrainReport, make_optimizer

FROZEN_SLOTS = (
    "generator",
    "duration_predictor",
    "pitch_predictor",
    "speech_encoder",
    "speaker_encoder_sv",
)


@dataclass
class AdaptationSample:
    """One dysarthric utterance with observed and prosody-corrected inputs.

    ``p``/``v`` carry the dysarthric durations and pitch and match the target
    mel frame count; ``p_tilde``/``v_tilde`` carry the predicted normal
    prosody and match each other. ``e_sv`` and ``z_sv_tilde`` are constants of
    the frozen SV system, precomputed once.
    """

    utt_id: str
    m80: torch.Tensor
    m40: torch.Tensor
    p: torch.Tensor
    v: torch.Tensor
    p_tilde: torch.Tensor
    v_tilde: torch.Tensor
    e_sv: torch.Tensor
    z_sv_tilde: torch.Tensor


@dataclass
class AsaState:
    speaker_encoder: ModelParams  # adapted, trainable
    discriminator: ModelParams  # trainable
    frozen: dict  # name -> ModelParams, never updated
    frozen_checksums: dict
    opt_speaker: torch.optim.Optimizer
    opt_disc: torch.optim.Optimizer
    lam: float = 1.0
    step: int = 0

    def verify_frozen(self) -> dict:
        current = {name: self.frozen[name].checksum() for name in self.frozen}
        changed = [n for n, c in current.items() if c != self.frozen_checksums[n]]
        if changed:
            raise FrozenParameterError(
                f"frozen parameter sets changed during ASA: {changed}"
            )
        return current


def clone_system(sv: SystemBundle) -> SystemBundle:
    """Deep-copy the SV system; the clone starts with identical checksums.

    Clone parameters are re-marked trainable: freezing is a property of an
    ASA state, not of the copied values.
    """
    clone = sv.clone(label=LABEL_ASA)
    for params in clone.slots().values():
        for p in params.net.parameters():
            p.requires_grad_(True)
    return clone


def init_asa(
    sv_bundle: SystemBundle,
    asa_bundle: SystemBundle,
    cfg: StageConfig,
    model: dict,
    lam: float = 1.0,
    discriminator: ModelParams | None = None,
) -> AsaState:
    """Build the ASA state around a cloned bundle.

    The adapted speaker encoder is the clone's slot (updated in place); the
    frozen set is the clone's other four components plus the SV speaker
    encoder. A fresh discriminator is seeded from the stage seed unless one
    is supplied (resume path).
    """
    if discriminator is None:
        disc_net = Discriminator(
            n_mels=80,
            crop_len=model["disc_crop_len"],
            channels=model["disc_channels"],
        )
        seed_init(disc_net, cfg.seed)
        discriminator = ModelParams(TAG_DISCRIMINATOR, disc_net)
    frozen = {
        "generator": asa_bundle.generator,
        "duration_predictor": asa_bundle.duration_predictor,
        "pitch_predictor": asa_bundle.pitch_predictor,
        "speech_encoder": asa_bundle.speech_encoder,
        "speaker_encoder_sv": sv_bundle.speaker_encoder,
    }
    for params in frozen.values():
        params.freeze()
    for p in asa_bundle.speaker_encoder.net.parameters():
        p.requires_grad_(True)
    state = AsaState(
        speaker_encoder=asa_bundle.speaker_encoder,
        discriminator=discriminator,
        frozen=frozen,
        frozen_checksums={n: p.checksum() for n, p in frozen.items()},
        opt_speaker=make_optimizer(
            cfg, asa_bundle.speaker_encoder.net.parameters()
        ),
        opt_disc=make_optimizer(cfg, discriminator.net.parameters()),
        lam=lam,
    )
    return state


def prepare_adaptation_set(
    store: FeatureStore, sv_bundle: SystemBundle, entries
) -> list[AdaptationSample]:
    """Build adaptation samples for a dysarthric speaker's utterances.

    Posterior rows come from teacher forcing over the utterance's label
    sequence (one row per alignment entry); observed durations expand them to
    p_k aligned with the target mel, and the prosody corrector supplies the
    normal counterparts. Deterministic: no randomness involved.
    """
    samples = []
    se = sv_bundle.speech_encoder.net
    dur_net = sv_bundle.duration_predictor.net
    pitch_net = sv_bundle.pitch_predictor.net
    spk_sv = sv_bundle.speaker_encoder.net
    gen = sv_bundle.generator.net
    for e in entries:
        rec = store.record(e.utt_id)
        if rec.durations.size == 0:
            raise CorpusError(f"{e.utt_id}: dysarthric utterance has no alignment")
        with torch.no_grad():
            rows = se.aligned_rows(
                store.feat120n(e.utt_id), store.label_ids(e.utt_id)
            )
            p = expand_by_duration(rows, store.durations(e.utt_id))
            pred_durations = dur_net.predict_frames(rows)
            p_tilde = expand_by_duration(rows, pred_durations)
            v_tilde = pitch_net(p_tilde)
            m40 = store.mel40n(e.utt_id)
            e_sv = spk_sv.embed(m40)
            z_sv_tilde = gen(p_tilde, v_tilde, e_sv)
        samples.append(
            AdaptationSample(
                utt_id=e.utt_id,
                m80=store.mel80n(e.utt_id),
                m40=m40,
                p=p,
                v=store.logf0n(e.utt_id),
                p_tilde=p_tilde,
                v_tilde=v_tilde,
                e_sv=e_sv,
                z_sv_tilde=z_sv_tilde,
            )
        )
    return samples


def forward_triple(sample: AdaptationSample, state: AsaState):
    """(z_sv_tilde, z_asa_tilde, z_asa) computed fresh from the current state."""
    gen = state.frozen["generator"].net
    with torch.no_grad():
        e_sv = state.frozen["speaker_encoder_sv"].net.embed(sample.m40)
        z_sv_tilde = gen(sample.p_tilde, sample.v_tilde, e_sv)
        e_asa = state.speaker_encoder.net.embed(sample.m40)
        z_asa_tilde = gen(sample.p_tilde, sample.v_tilde, e_asa)
        z_asa = gen(sample.p, sample.v, e_asa)
    return z_sv_tilde, z_asa_tilde, z_asa


def _forward_batch(batch, state: AsaState, offsets):
    """Speaker-encoder-side forwards for one batch, with crops attached."""
    gen = state.frozen["generator"].net
    crop_len = state.discriminator.net.crop_len
    items = []
    for sample, offset in zip(batch, offsets):
        e_asa = state.speaker_encoder.net.embed(sample.m40)
        z_asa = gen(sample.p, sample.v, e_asa)
        z_asa_tilde = gen(sample.p_tilde, sample.v_tilde, e_asa)
        items.append(
            {
                "sample": sample,
                "l_adapt": adaptation_loss(z_asa, sample.m80),
                "crop_asa": crop_or_tile(z_asa_tilde, crop_len, offset),
                "crop_sv": crop_or_tile(sample.z_sv_tilde, crop_len, offset),
            }
        )
    return items


def _assign_grads(parameters, grads):
    for param, grad in zip(parameters, grads):
        param.grad = grad


def asa_step(
    batch, state: AsaState, rng: np.random.Generator, mode: str = "two_pass"
) -> dict:
    """One alternation: discriminator update, then speaker-encoder update.

    mode "two_pass" backs the speaker update by the explicit objective
    L_adapt - lambda * L_dis; mode "grl" routes the discriminator input
    through a gradient-reversal layer instead. Both produce identical
    speaker-encoder gradients.
    """
    if mode not in ("two_pass", "grl"):
        raise ValueError(f"unknown ASA mode {mode!r}")
    disc = state.discriminator.net
    disc_params = list(disc.parameters())
    spk_params = list(state.speaker_encoder.net.parameters())
    offsets = rng.integers(0, 1 << 31, size=len(batch))

    items = _forward_batch(batch, state, offsets)

    # 1) discriminator minimizes L_dis at the current speaker encoder
    logit_sv = torch.stack([disc.logit(it["crop_sv"]) for it in items])
    logit_asa = torch.stack([disc.logit(it["crop_asa"].detach()) for it in items])
    l_dis_disc = discrimination_loss_logits(logit_sv, logit_asa)
    _assign_grads(disc_params, torch.autograd.grad(l_dis_disc, disc_params))
    state.opt_disc.step()
    state.opt_disc.zero_grad()

    # 2) speaker encoder minimizes L_MTL at the updated discriminator
    with torch.no_grad():
        logit_sv_const = torch.stack([disc.logit(it["crop_sv"]) for it in items])
    l_adapt = torch.stack([it["l_adapt"] for it in items]).mean()
    if mode == "two_pass":
        logit_asa2 = torch.stack([disc.logit(it["crop_asa"]) for it in items])
        l_dis = discrimination_loss_logits(logit_sv_const, logit_asa2)
        objective = mtl_loss(l_adapt, l_dis, state.lam)
    else:
        logit_asa2 = torch.stack(
            [disc.logit(grl(it["crop_asa"], scale=state.lam)) for it in items]
        )
        l_dis = discrimination_loss_logits(logit_sv_const, logit_asa2)
        objective = l_adapt + l_dis
    _assign_grads(spk_params, torch.autograd.grad(objective, spk_params))
    state.opt_speaker.step()
    state.opt_speaker.zero_grad()

    state.step += 1
    l_dis_value = float(l_dis.detach())
    l_adapt_value = float(l_adapt.detach())
    return {
        "loss_adapt": l_adapt_value,
        "loss_dis": l_dis_value,
        "loss_mtl": l_adapt_value - state.lam * l_dis_value,
        "loss_dis_disc_pass": float(l_dis_disc.detach()),
    }


def speaker_gradients(
    batch, state: AsaState, rng: np.random.Generator, mode: str
) -> list[torch.Tensor]:
    """Speaker-encoder gradients of the adaptation objective, no update."""
    offsets = rng.integers(0, 1 << 31, size=len(batch))
    items = _forward_batch(batch, state, offsets)
    disc = state.discriminator.net
    with torch.no_grad():
        logit_sv_const = torch.stack([disc.logit(it["crop_sv"]) for it in items])
    l_adapt = torch.stack([it["l_adapt"] for it in items]).mean()
    if mode == "two_pass":
        logit_asa = torch.stack([disc.logit(it["crop_asa"]) for it in items])
        objective = mtl_loss(
            l_adapt, discrimination_loss_logits(logit_sv_const, logit_asa), state.lam
        )
    else:
        logit_asa = torch.stack(
            [disc.logit(grl(it["crop_asa"], scale=state.lam)) for it in items]
        )
        objective = l_adapt + discrimination_loss_logits(logit_sv_const, logit_asa)
    return list(
        torch.autograd.grad(objective, list(state.speaker_encoder.net.parameters()))
    )


def run_asa(
    samples: list[AdaptationSample],
    state: AsaState,
    cfg: StageConfig,
    mode: str = "two_pass",
    checksum_every: int = 50,
) -> TrainReport:
    """Adaptation loop over shuffled batches; verifies freezing as it goes."""
    if not samples:
        raise CorpusError("empty adaptation set")
    t0 = time.time()
    frozen_log = [{"step": state.step, "checksums": state.verify_frozen()}]
    trace = []
    for step in range(state.step, cfg.steps):
        rng = np.random.default_rng([cfg.seed, step])
        chosen = rng.choice(
            len(samples), size=cfg.batch_size, replace=len(samples) < cfg.batch_size
        )
        losses = asa_step([samples[i] for i in chosen], state, rng, mode=mode)
        trace.append(losses)
        if checksum_every and (step + 1) % checksum_every == 0:
            frozen_log.append(
                {"step": state.step, "checksums": state.verify_frozen()}
            )
    if not frozen_log or frozen_log[-1]["step"] != state.step:
        frozen_log.append({"step": state.step, "checksums": state.verify_frozen()})
    report = TrainReport("asa", trace, wall_seconds=time.time() - t0)
    report.extras["frozen_log"] = frozen_log
    report.extras["mode"] = mode
    return report


# --------------------------------------------------------------------------
# ASA state persistence (exact resume)
# --------------------------------------------------------------------------


def save_asa_state(path, state: AsaState) -> None:
    arrays = state.speaker_encoder.state_arrays("spk.")
    arrays.update(state.discriminator.state_arrays("disc."))
    spk_arrays, spk_scalars = optimizer_state_arrays(state.opt_speaker)
    disc_arrays, disc_scalars = optimizer_state_arrays(state.opt_disc)
    arrays.update({f"spkopt.{k[4:]}": v for k, v in spk_arrays.items()})
    arrays.update({f"discopt.{k[4:]}": v for k, v in disc_arrays.items()})
    meta = {
        "kind": "asa_state",
        "step": state.step,
        "lam": state.lam,
        "speaker": state.speaker_encoder.meta(),
        "discriminator": state.discriminator.meta(),
        "spk_opt_scalars": spk_scalars,
        "disc_opt_scalars": disc_scalars,
    }
    save_arrays(path, arrays, meta)


def load_asa_state(
    path, sv_bundle: SystemBundle, asa_bundle: SystemBundle, cfg: StageConfig
) -> AsaState:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "asa_state":
        raise CheckpointError(f"{path}: not an ASA state checkpoint")
    asa_bundle.speaker_encoder.load_state_arrays(arrays, "spk.")
    disc_meta = meta["discriminator"]
    disc = ModelParams(
        disc_meta["tag"], build_net(disc_meta["class"], disc_meta["hparams"])
    )
    disc.load_state_arrays(arrays, "disc.")
    state = init_asa(
        sv_bundle,
        asa_bundle,
        cfg,
        model={"disc_crop_len": disc.net.crop_len, "disc_channels": 1},
        lam=float(meta["lam"]),
        discriminator=disc,
    )
    state.step = int(meta["step"])
    spk_arrays = {
        f"opt.{k[7:]}": v for k, v in arrays.items() if k.startswith("spkopt.")
    }
    disc_arrays = {
        f"opt.{k[8:]}": v for k, v in arrays.items() if k.startswith("discopt.")
    }
    restore_optimizer_state(
        state.opt_speaker, spk_arrays, meta.get("spk_opt_scalars", {})
    )
    restore_optimizer_state(
        state.opt_disc, disc_arrays, meta.get("disc_opt_scalars", {})
    )
    return state
