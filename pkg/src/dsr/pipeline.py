"""Workspace orchestration: run stages, persist checkpoints, assemble bundles.

This is the layer the CLI drives. Each stage writes a component checkpoint,
an exact-resume training state, and a line-delimited report into the
workspace; bundle assembly pulls the pieces together per dysarthric speaker.
"""

from __future__ import annotations

from pathlib import Path

from . import asa as asa_mod
from . import training as tr
from .config import Settings
from .corpus import Manifest, load_manifest, synthesize_toy_corpus
from .data import FeatureStore, build_features
from .errors import MissingFileError
from .params import (
    LABEL_SV,
    SystemBundle,
    load_bundle,
    load_component,
    save_bundle,
    save_component,
)


def ensure_dirs(settings: Settings) -> None:
    for path in (settings.checkpoints_dir, settings.reports_dir):
        path.mkdir(parents=True, exist_ok=True)


def gen_corpus(settings: Settings) -> Manifest:
    manifest_path = synthesize_toy_corpus(settings.corpus, settings.corpus_dir)
    return load_manifest(manifest_path)


def open_manifest(settings: Settings) -> Manifest:
    if not settings.manifest_path.exists():
        raise MissingFileError(
            f"no corpus at {settings.manifest_path}; run gen-corpus first"
        )
    return load_manifest(settings.manifest_path)


def build_feature_store(settings: Settings) -> FeatureStore:
    return build_features(open_manifest(settings), settings.features_dir)


def open_feature_store(settings: Settings) -> FeatureStore:
    stats = settings.features_dir / "stats.json"
    if not stats.exists():
        raise MissingFileError(f"no features at {settings.features_dir}; run features")
    return FeatureStore(open_manifest(settings), settings.features_dir)


def _resume_state(settings: Settings, name: str, cfg, resume: bool):
    path = settings.train_state(name)
    if resume and path.exists():
        return tr.load_train_state(path, cfg)
    return None


def stage_pretrain(settings: Settings, store: FeatureStore, resume: bool = False):
    ensure_dirs(settings)
    cfg = settings.stage("pretrain")
    state = _resume_state(settings, "pretrain", cfg, resume)
    params, report, state = tr.pretrain_speech_encoder(
        store, cfg, settings.model, resume=state
    )
    save_component(params, settings.checkpoint("phi_p"))
    tr.save_train_state(settings.train_state("pretrain"), state)
    tr.write_report(report, settings.reports_dir / "pretrain.jsonl")
    return params, report


def stage_finetune(
    settings: Settings, store: FeatureStore, speaker: str, resume: bool = False
):
    ensure_dirs(settings)
    cfg = settings.stage("finetune")
    phi_p = load_component(settings.checkpoint("phi_p"))
    entries = store.entries(role="dysarthric", split="train", speaker=speaker)
    state = _resume_state(settings, f"finetune_{speaker}", cfg, resume)
    params, report, state = tr.finetune_speech_encoder(
        phi_p, store, entries, cfg, resume=state
    )
    save_component(params, settings.checkpoint(f"phi_sd_{speaker}"))
    tr.save_train_state(settings.train_state(f"finetune_{speaker}"), state)
    tr.write_report(report, settings.reports_dir / f"finetune_{speaker}.jsonl")
    return params, report


def stage_prosody(settings: Settings, store: FeatureStore, resume: bool = False):
    ensure_dirs(settings)
    cfg_d = settings.stage("duration")
    cfg_p = settings.stage("pitch")
    phi_p = load_component(settings.checkpoint("phi_p"))
    dur, pitch, report_d, report_p, state_d, state_p = tr.train_prosody_corrector(
        store,
        phi_p,
        cfg_d,
        cfg_p,
        settings.model,
        resume_duration=_resume_state(settings, "duration", cfg_d, resume),
        resume_pitch=_resume_state(settings, "pitch", cfg_p, resume),
    )
    save_component(dur, settings.checkpoint("duration"))
    save_component(pitch, settings.checkpoint("pitch"))
    tr.save_train_state(settings.train_state("duration"), state_d)
    tr.save_train_state(settings.train_state("pitch"), state_p)
    tr.write_report(report_d, settings.reports_dir / "duration.jsonl")
    tr.write_report(report_p, settings.reports_dir / "pitch.jsonl")
    return dur, pitch, report_d, report_p


def stage_speaker(settings: Settings, store: FeatureStore, resume: bool = False):
    ensure_dirs(settings)
    cfg = settings.stage("speaker")
    state = _resume_state(settings, "speaker", cfg, resume)
    params, report, state = tr.train_speaker_encoder(
        store,
        cfg,
        settings.model,
        n_speakers=settings.ge2e_speakers,
        m_utts=settings.ge2e_utts,
        crop_frames=settings.speaker_crop_frames,
        resume=state,
    )
    save_component(params, settings.checkpoint("speaker_sv"))
    tr.save_train_state(settings.train_state("speaker"), state)
    tr.write_report(report, settings.reports_dir / "speaker.jsonl")
    return params, report


def stage_generator(settings: Settings, store: FeatureStore, resume: bool = False):
    ensure_dirs(settings)
    cfg = settings.stage("generator")
    phi_p = load_component(settings.checkpoint("phi_p"))
    speaker_sv = load_component(settings.checkpoint("speaker_sv"))
    state = _resume_state(settings, "generator", cfg, resume)
    params, report, state = tr.train_generator(
        store, phi_p, speaker_sv, cfg, settings.model, resume=state
    )
    save_component(params, settings.checkpoint("generator"))
    tr.save_train_state(settings.train_state("generator"), state)
    tr.write_report(report, settings.reports_dir / "generator.jsonl")
    return params, report


def assemble_sv_bundle(settings: Settings, speaker: str) -> SystemBundle:
    """SV-DSR bundle for one dysarthric speaker from component checkpoints."""
    paths = {
        "speech_encoder": settings.checkpoint(f"phi_sd_{speaker}"),
        "duration_predictor": settings.checkpoint("duration"),
        "pitch_predictor": settings.checkpoint("pitch"),
        "speaker_encoder": settings.checkpoint("speaker_sv"),
        "generator": settings.checkpoint("generator"),
    }
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise MissingFileError(
            "cannot assemble SV-DSR bundle; missing checkpoints: "
            + ", ".join(missing)
        )
    return SystemBundle(label=LABEL_SV, **{
        name: load_component(path) for name, path in paths.items()
    })


def stage_asa(
    settings: Settings,
    store: FeatureStore,
    speaker: str,
    mode: str = "two_pass",
    checksum_every: int = 50,
    resume: bool = False,
):
    """Clone SV-DSR, adapt the speaker encoder, persist both bundles."""
    ensure_dirs(settings)
    cfg = settings.stage("asa")
    sv_bundle = assemble_sv_bundle(settings, speaker)
    asa_bundle = asa_mod.clone_system(sv_bundle)
    state_path = settings.train_state(f"asa_{speaker}")
    if resume and state_path.exists():
        state = asa_mod.load_asa_state(state_path, sv_bundle, asa_bundle, cfg)
    else:
        state = asa_mod.init_asa(
            sv_bundle, asa_bundle, cfg, settings.model, lam=settings.asa_lambda
        )
    samples = asa_mod.prepare_adaptation_set(
        store,
        sv_bundle,
        store.entries(role="dysarthric", split="train", speaker=speaker),
    )
    report = asa_mod.run_asa(
        samples, state, cfg, mode=mode, checksum_every=checksum_every
    )
    save_bundle(sv_bundle, settings.checkpoint(f"sv_{speaker}"))
    save_bundle(asa_bundle, settings.checkpoint(f"asa_{speaker}"))
    save_component(state.discriminator, settings.checkpoint(f"disc_{speaker}"))
    asa_mod.save_asa_state(state_path, state)
    tr.write_report(
        report,
        settings.reports_dir / f"asa_{speaker}.jsonl",
        columns=("loss_adapt", "loss_dis", "loss_mtl"),
    )
    return sv_bundle, asa_bundle, state, report


def load_system_bundles(settings: Settings, speaker: str) -> dict:
    out = {}
    for name, label in (("sv", "SV-DSR"), ("asa", "ASA-DSR")):
        path = settings.checkpoint(f"{name}_{speaker}")
        if path.exists():
            out[label] = load_bundle(path)
    return out
