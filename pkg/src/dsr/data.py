"""Feature preparation: per-utterance caches, global stats, train/eval splits.

Features are stored raw (one .npz per utterance); normalization happens at
load time against the global stats computed over the healthy portion of the
training split (healthy + prosody-reference roles), stored in a versioned
stats.json.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import features as ft
from .corpus import Manifest, ManifestEntry, frame_config, read_labels, read_wav
from .errors import CorpusError, MissingFileError
from .phonemes import PhonemeInventory

STATS_VERSION = 1
STATS_BLOCKS = ("feat120", "mel40", "mel80", "logf0")
EVAL_FRACTION = 0.2


@dataclass
class UttRecord:
    utt_id: str
    speaker: str
    role: str
    feat120: np.ndarray  # raw log-mel40 + deltas, (T, 120)
    mel80: np.ndarray  # raw log-mel80, (T, 80)
    logf0: np.ndarray  # interpolated natural-log Hz, (T,)
    voicing: np.ndarray  # (T,) bool
    durations: np.ndarray  # per-phoneme frames (int64)
    label_ids: np.ndarray  # per-phoneme inventory ids (int64)

    @property
    def mel40(self) -> np.ndarray:
        return self.feat120[:, :40]

    @property
    def n_frames(self) -> int:
        return self.feat120.shape[0]


@dataclass(frozen=True)
class FeatureStats:
    feat120: ft.NormStats
    mel40: ft.NormStats
    mel80: ft.NormStats
    logf0: ft.NormStats


def extract_utterance(manifest: Manifest, entry: ManifestEntry) -> UttRecord:
    inv = manifest.inventory
    wav = ft.Waveform(read_wav(manifest.path(entry.wav)))
    mel40 = ft.mel_spectrogram(wav, frame_config(40))
    mel80 = ft.mel_spectrogram(wav, frame_config(80))
    track = ft.extract_f0(wav, frame_config(40))
    frames = ft.reconcile_lengths(mel40.n_frames, mel80.n_frames, track.n_frames)
    alignment = ft.load_alignment(
        manifest.path(entry.alignment), inv, expected_frames=frames
    )
    labels = read_labels(manifest.path(entry.labels), inv)
    if labels != alignment.symbols:
        raise CorpusError(f"{entry.utt_id}: label file disagrees with alignment")
    feat120 = ft.append_deltas(mel40)
    return UttRecord(
        utt_id=entry.utt_id,
        speaker=entry.speaker,
        role=entry.role,
        feat120=feat120.values[:frames],
        mel80=mel80.values[:frames],
        logf0=ft.interpolate_f0(track)[:frames],
        voicing=track.voicing[:frames],
        durations=alignment.durations,
        label_ids=np.array(inv.to_ids(labels), dtype=np.int64),
    )


def split_entries(entries) -> tuple[list, list]:
    """Per speaker: first 80% of utterances train, the rest held out."""
    by_speaker: dict[str, list] = {}
    for e in entries:
        by_speaker.setdefault(e.speaker, []).append(e)
    train, held_out = [], []
    for speaker in by_speaker:
        utts = sorted(by_speaker[speaker], key=lambda e: e.utt_id)
        n_eval = max(1, int(round(EVAL_FRACTION * len(utts)))) if len(utts) > 1 else 0
        cut = len(utts) - n_eval
        train.extend(utts[:cut])
        held_out.extend(utts[cut:])
    return train, held_out


def build_features(manifest: Manifest, out_dir) -> "FeatureStore":
    """Extract and cache features for every utterance; compute global stats."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = {}
    for entry in manifest.entries:
        rec = extract_utterance(manifest, entry)
        np.savez(
            out / f"{entry.utt_id}.npz",
            feat120=rec.feat120,
            mel80=rec.mel80,
            logf0=rec.logf0,
            voicing=rec.voicing,
            durations=rec.durations,
            label_ids=rec.label_ids,
        )
        records[entry.utt_id] = rec

    train, _ = split_entries(manifest.entries)
    healthy_train = [
        records[e.utt_id]
        for e in train
        if e.role in ("healthy", "prosody_reference")
    ]
    if not healthy_train:
        raise CorpusError("no healthy training utterances to compute stats from")
    stats = FeatureStats(
        feat120=ft.compute_stats([r.feat120 for r in healthy_train]),
        mel40=ft.compute_stats([r.mel40 for r in healthy_train]),
        mel80=ft.compute_stats([r.mel80 for r in healthy_train]),
        logf0=ft.compute_stats([r.logf0[:, None] for r in healthy_train]),
    )
    save_stats(stats, out / "stats.json")
    return FeatureStore(manifest, out)


def save_stats(stats: FeatureStats, path) -> None:
    payload = {"version": STATS_VERSION, "blocks": {}}
    for name in STATS_BLOCKS:
        block: ft.NormStats = getattr(stats, name)
        payload["blocks"][name] = {
            "mean": block.mean.tolist(),
            "std": block.std.tolist(),
        }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_stats(path) -> FeatureStats:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"stats file not found: {path}")
    payload = json.loads(path.read_text(encoding="utf-8"))
    if payload.get("version") != STATS_VERSION:
        raise CorpusError(f"unsupported stats version {payload.get('version')}")
    blocks = {
        name: ft.NormStats(
            np.array(payload["blocks"][name]["mean"]),
            np.array(payload["blocks"][name]["std"]),
        )
        for name in STATS_BLOCKS
    }
    return FeatureStats(**blocks)


class FeatureStore:
    """Lazy access to cached features, normalized views, and splits."""

    def __init__(self, manifest: Manifest, features_dir):
        self.manifest = manifest
        self.features_dir = Path(features_dir)
        self.stats = load_stats(self.features_dir / "stats.json")
        self.inventory: PhonemeInventory = manifest.inventory
        self._cache: dict[str, UttRecord] = {}
        self._entries = {e.utt_id: e for e in manifest.entries}
        train, held_out = split_entries(manifest.entries)
        self._train_ids = {e.utt_id for e in train}
        self._split = {"train": train, "eval": held_out}

    def entries(self, role: str | None = None, split: str | None = None,
                speaker: str | None = None) -> list[ManifestEntry]:
        pool = self._split[split] if split else list(self.manifest.entries)
        if role is not None:
            pool = [e for e in pool if e.role == role]
        if speaker is not None:
            pool = [e for e in pool if e.speaker == speaker]
        return pool

    def record(self, utt_id: str) -> UttRecord:
        if utt_id not in self._cache:
            entry = self._entries[utt_id]
            path = self.features_dir / f"{utt_id}.npz"
            if not path.exists():
                raise MissingFileError(
                    f"features for {utt_id} not built (run the features step)"
                )
            data = np.load(path)
            self._cache[utt_id] = UttRecord(
                utt_id=utt_id,
                speaker=entry.speaker,
                role=entry.role,
                feat120=data["feat120"],
                mel80=data["mel80"],
                logf0=data["logf0"],
                voicing=data["voicing"],
                durations=data["durations"],
                label_ids=data["label_ids"],
            )
        return self._cache[utt_id]

    # normalized torch views ------------------------------------------------

    def feat120n(self, utt_id: str) -> torch.Tensor:
        rec = self.record(utt_id)
        return torch.from_numpy(ft.normalize(rec.feat120, self.stats.feat120))

    def mel40n(self, utt_id: str) -> torch.Tensor:
        rec = self.record(utt_id)
        return torch.from_numpy(ft.normalize(rec.mel40, self.stats.mel40))

    def mel80n(self, utt_id: str) -> torch.Tensor:
        rec = self.record(utt_id)
        return torch.from_numpy(ft.normalize(rec.mel80, self.stats.mel80))

    def logf0n(self, utt_id: str) -> torch.Tensor:
        rec = self.record(utt_id)
        normalized = ft.normalize(rec.logf0[:, None], self.stats.logf0)[:, 0]
        return torch.from_numpy(normalized)

    def label_ids(self, utt_id: str) -> list[int]:
        return [int(i) for i in self.record(utt_id).label_ids]

    def durations(self, utt_id: str) -> torch.Tensor:
        return torch.from_numpy(self.record(utt_id).durations.astype(np.int64))
