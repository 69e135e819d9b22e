"""Objective proxy metrics: PER, mel distortion, speaker similarity, f_d.

The phoneme recognizer is a template matcher derived from the toy corpus
generator's own phoneme renderer (frame-wise nearest template on
mean-removed log-mels, run-length collapsed). It is independent of every
trained network, so it can serve as the recognition oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import features as ft
from .corpus import TEMPLATES, SpeakerProfile, frame_config, render_audio
from .data import FeatureStore
from .errors import EmptyInputError
from .params import SystemBundle
from .phonemes import SILENCE, PhonemeInventory
from .training import Reconstruction, reconstruct


# --------------------------------------------------------------------------
# Sequence metrics
# --------------------------------------------------------------------------


def levenshtein(hyp, ref) -> int:
    """Edit distance with unit substitution/insertion/deletion costs."""
    hyp, ref = list(hyp), list(ref)
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, start=1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, start=1):
            cur[j] = min(
                prev[j] + 1,  # deletion of h
                cur[j - 1] + 1,  # insertion of r
                prev[j - 1] + (h != r),  # substitution
            )
        prev = cur
    return prev[-1]


def phoneme_error_rate(hyp, ref) -> float:
    ref = list(ref)
    if not ref:
        raise EmptyInputError("reference sequence is empty")
    return levenshtein(hyp, ref) / len(ref)


def dtw_mel_distortion(a: np.ndarray, b: np.ndarray) -> float:
    """Mean per-frame Euclidean distance along the optimal DTW path."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptyInputError("cannot align an empty spectrogram")
    if a.shape[1] != b.shape[1]:
        raise EmptyInputError("mel dimensionality differs between inputs")
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    n, m = cost.shape
    acc = np.full((n, m), np.inf)
    steps = np.zeros((n, m), dtype=np.int64)
    acc[0, 0] = cost[0, 0]
    steps[0, 0] = 1
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                continue
            candidates = []
            if i > 0:
                candidates.append((acc[i - 1, j], steps[i - 1, j]))
            if j > 0:
                candidates.append((acc[i, j - 1], steps[i, j - 1]))
            if i > 0 and j > 0:
                candidates.append((acc[i - 1, j - 1], steps[i - 1, j - 1]))
            best, nsteps = min(candidates)
            acc[i, j] = best + cost[i, j]
            steps[i, j] = nsteps + 1
    return float(acc[-1, -1] / steps[-1, -1])


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / max(denom, 1e-12))


def mean_reference_embedding(embeddings) -> np.ndarray:
    """Mean of reference embeddings, re-normalized to unit length."""
    if len(embeddings) == 0:
        raise EmptyInputError("empty reference set")
    mean = np.mean([np.asarray(e, dtype=np.float64) for e in embeddings], axis=0)
    return mean / max(np.linalg.norm(mean), 1e-12)


def speaker_similarity(recon_embedding, reference_embeddings) -> float:
    """Cosine between a reconstruction's embedding and the reference centroid."""
    return cosine_similarity(
        recon_embedding, mean_reference_embedding(reference_embeddings)
    )


def equal_error_rate(genuine_scores, impostor_scores) -> float:
    """EER of a score-threshold verifier (higher score = same speaker)."""
    genuine = np.asarray(list(genuine_scores), dtype=np.float64)
    impostor = np.asarray(list(impostor_scores), dtype=np.float64)
    if genuine.size == 0 or impostor.size == 0:
        raise EmptyInputError("need both genuine and impostor scores")
    best = (1.0, 1.0)
    for threshold in np.unique(np.concatenate([genuine, impostor])):
        frr = float(np.mean(genuine < threshold))
        far = float(np.mean(impostor >= threshold))
        if abs(far - frr) < best[0]:
            best = (abs(far - frr), (far + frr) / 2.0)
    return best[1]


# --------------------------------------------------------------------------
# Toy phoneme recognition oracle
# --------------------------------------------------------------------------

#: Speaker-variation grid covered by the template bank: pitch changes the
#: harmonic fine structure of voiced templates, formant scale shifts peaks.
_TEMPLATE_F0S = (105.0, 160.0, 250.0)
_TEMPLATE_SCALES = (0.95, 1.0, 1.06)


@dataclass
class PhonemeRecognizer:
    inventory: PhonemeInventory
    min_run: int = 3
    smooth_frames: int = 5
    sil_energy_threshold: float = 0.0

    def __post_init__(self):
        cfg80 = frame_config(80)
        bank, owners = [], []
        energies = {}
        for sym in self.inventory.symbols[:-1]:  # skip <eos>
            for f0 in _TEMPLATE_F0S:
                for scale in _TEMPLATE_SCALES:
                    profile = _render_profile(sym, f0, scale, cfg80)
                    if (f0, scale) == (160.0, 1.0):
                        energies[sym] = _frame_energy(profile[None, :])[0]
                    if sym != SILENCE:
                        bank.append(profile)
                        owners.append(sym)
        bank = _detrend(np.stack(bank))
        self._bank = bank / np.linalg.norm(bank, axis=1, keepdims=True)
        self._owners = owners
        phone_floor = min(v for s, v in energies.items() if s != SILENCE)
        self.sil_energy_threshold = 0.5 * (energies[SILENCE] + phone_floor)

    def classify_frames(self, log_mel80: np.ndarray) -> list[str]:
        """Per-frame labels over a denormalized log-mel80 spectrogram."""
        log_mel80 = np.asarray(log_mel80, dtype=np.float64)
        energy = _frame_energy(log_mel80)
        smoothed = _smooth_time(log_mel80, self.smooth_frames)
        shapes = _detrend(smoothed)
        shapes = shapes / np.maximum(
            np.linalg.norm(shapes, axis=1, keepdims=True), 1e-12
        )
        best = np.argmax(shapes @ self._bank.T, axis=1)
        labels = [
            SILENCE if energy[t] < self.sil_energy_threshold else self._owners[best[t]]
            for t in range(log_mel80.shape[0])
        ]
        return _mode_filter(labels, self.smooth_frames)

    def recognize(self, log_mel80: np.ndarray) -> list[str]:
        """Collapse per-frame labels into a phoneme sequence (silence dropped)."""
        frames = self.classify_frames(log_mel80)
        seq = []
        run_sym, run_len = None, 0
        for sym in frames + [None]:
            if sym == run_sym:
                run_len += 1
                continue
            if run_sym is not None and run_sym != SILENCE and run_len >= self.min_run:
                seq.append(run_sym)
            run_sym, run_len = sym, 1
        return seq


def _render_profile(sym: str, f0: float, scale: float, cfg80) -> np.ndarray:
    speaker = SpeakerProfile(
        speaker_id="template",
        role="healthy",
        base_f0=f0,
        tilt=0.0,
        formant_scale=scale,
    )
    frames = 24
    track = np.full(frames, f0 if TEMPLATES[sym].voiced else 0.0)
    audio = render_audio(
        [sym], np.array([frames]), track, speaker, np.random.default_rng(99)
    )
    mel = ft.mel_spectrogram(ft.Waveform(audio), cfg80).values
    return mel[4:-4].mean(axis=0)


def _detrend(x: np.ndarray) -> np.ndarray:
    """Remove per-row mean and linear trend across mel bins (tilt-invariant)."""
    n = x.shape[-1]
    t = np.arange(n) - (n - 1) / 2.0
    slope = (x @ t) / (t @ t)
    return x - np.outer(np.atleast_1d(slope), t) - x.mean(axis=-1, keepdims=True)


def _smooth_time(x: np.ndarray, width: int) -> np.ndarray:
    if width <= 1 or x.shape[0] == 1:
        return x
    kernel = np.ones(width) / width
    return np.apply_along_axis(
        lambda column: np.convolve(column, kernel, mode="same"), 0, x
    )


def _mode_filter(labels: list, width: int) -> list:
    from collections import Counter

    half = width // 2
    out = []
    for t in range(len(labels)):
        window = labels[max(0, t - half) : t + half + 1]
        out.append(Counter(window).most_common(1)[0][0])
    return out


def _frame_energy(log_mel: np.ndarray) -> np.ndarray:
    # log of summed linear mel energy per frame
    peak = log_mel.max(axis=1, keepdims=True)
    return (peak + np.log(np.exp(log_mel - peak).sum(axis=1, keepdims=True)))[:, 0]


# --------------------------------------------------------------------------
# System evaluation
# --------------------------------------------------------------------------


def embed_mel80(log_mel80: np.ndarray, store: FeatureStore, speaker_net) -> np.ndarray:
    """Embed a denormalized 80-mel via the 40-mel projection and an encoder."""
    mel40 = ft.mel80_to_mel40(log_mel80, frame_config(80))
    normalized = ft.normalize(mel40, store.stats.mel40)
    with torch.no_grad():
        e = speaker_net.embed(torch.from_numpy(normalized))
    return e.numpy()


def reference_embeddings(store: FeatureStore, entries, speaker_net) -> list:
    out = []
    with torch.no_grad():
        for e in entries:
            out.append(speaker_net.embed(store.mel40n(e.utt_id)).numpy())
    return out


def discriminator_score(disc_net, mel_norm: np.ndarray) -> float:
    from .nets.discriminator import crop_or_tile

    with torch.no_grad():
        crop = crop_or_tile(
            torch.from_numpy(np.asarray(mel_norm)), disc_net.crop_len, 0
        )
        return float(disc_net(crop))


@dataclass
class EvalRow:
    utt_id: str
    system: str
    cosine: float
    per: float
    mel_dtw: float
    f_d: float


@dataclass
class EvalReport:
    rows: list
    aggregates: dict

    def table(self) -> str:
        lines = []
        header = f"{'system':8s} {'utts':>5s} {'cosine':>8s} {'PER':>8s} {'melDTW':>8s} {'f_d':>8s}"
        lines.append(header)
        lines.append("-" * len(header))
        for system, agg in self.aggregates.items():
            if not isinstance(agg, dict) or "cosine" not in agg:
                continue
            lines.append(
                f"{system:8s} {agg['n']:5d} {agg['cosine']:8.4f} "
                f"{agg['per']:8.4f} {agg['mel_dtw']:8.4f} {agg['f_d']:8.4f}"
            )
        extras = self.aggregates.get("prosody")
        if extras:
            lines.append(
                f"prosody reference: duration MAE {extras['duration_mae']:.3f} frames, "
                f"log-F0 RMSE {extras['logf0_rmse']:.4f}"
            )
        raw = self.aggregates.get("raw_per")
        if raw is not None:
            lines.append(f"raw dysarthric PER (recognition oracle): {raw:.4f}")
        return "\n".join(lines)

    def write(self, path_jsonl, path_txt=None) -> None:
        path_jsonl = Path(path_jsonl)
        path_jsonl.parent.mkdir(parents=True, exist_ok=True)
        with open(path_jsonl, "w", encoding="utf-8") as fh:
            for row in self.rows:
                fh.write(json.dumps(row.__dict__) + "\n")
            fh.write(json.dumps({"aggregates": self.aggregates}) + "\n")
        if path_txt is not None:
            Path(path_txt).write_text(self.table() + "\n", encoding="utf-8")


def evaluate_prosody(
    store: FeatureStore, bundle: SystemBundle, encoder=None
) -> dict:
    """Duration MAE (frames) and log-F0 RMSE on held-out reference utterances.

    ``encoder`` should be the pretrained speech encoder the prosody corrector
    was trained with; it defaults to the bundle's (fine-tuned) encoder.
    """
    from .nets import expand_by_duration

    encoder_net = encoder.net if encoder is not None else bundle.speech_encoder.net
    entries = store.entries(role="prosody_reference", split="eval")
    dur_errors = []
    f0_sq_errors = []
    with torch.no_grad():
        for e in entries:
            rows = encoder_net.aligned_rows(
                store.feat120n(e.utt_id), store.label_ids(e.utt_id)
            )
            pred = bundle.duration_predictor.net.predict_frames(rows)
            gt = store.durations(e.utt_id)
            dur_errors.extend((pred - gt).abs().double().tolist())
            expanded = expand_by_duration(rows, gt)
            pred_pitch = bundle.pitch_predictor.net(expanded).numpy()
            pred_logf0 = ft.denormalize(pred_pitch[:, None], store.stats.logf0)[:, 0]
            true_logf0 = store.record(e.utt_id).logf0
            f0_sq_errors.extend(((pred_logf0 - true_logf0) ** 2).tolist())
    return {
        "duration_mae": float(np.mean(dur_errors)),
        "logf0_rmse": float(np.sqrt(np.mean(f0_sq_errors))),
    }


def evaluate_systems(
    store: FeatureStore,
    speaker: str,
    bundles: dict,
    judge_bundle: SystemBundle,
    disc_net=None,
    mode: str = "PP",
    prosody_encoder=None,
) -> EvalReport:
    """Side-by-side evaluation on one dysarthric speaker's held-out split.

    ``bundles`` maps system name (e.g. "SV-DSR") to its SystemBundle;
    ``judge_bundle`` supplies the SV speaker encoder used as the similarity
    judge for every system. Deterministic throughout.
    """
    recognizer = PhonemeRecognizer(store.inventory)
    judge = judge_bundle.speaker_encoder.net
    eval_entries = store.entries(role="dysarthric", split="eval", speaker=speaker)
    ref_entries = store.entries(role="dysarthric", split="train", speaker=speaker)
    refs = reference_embeddings(store, ref_entries, judge)

    rows = []
    aggregates = {}
    raw_pers = []
    for entry in eval_entries:
        rec = store.record(entry.utt_id)
        intended = store.inventory.strip_silence(
            store.inventory.to_symbols(store.label_ids(entry.utt_id))
        )
        raw_pers.append(
            phoneme_error_rate(recognizer.recognize(rec.mel80), intended)
        )
    aggregates["raw_per"] = float(np.mean(raw_pers)) if raw_pers else None

    for system, bundle in bundles.items():
        per_rows = []
        for entry in eval_entries:
            recon: Reconstruction = reconstruct(store, entry.utt_id, bundle, mode)
            rec = store.record(entry.utt_id)
            intended = store.inventory.strip_silence(
                store.inventory.to_symbols(store.label_ids(entry.utt_id))
            )
            hyp = recognizer.recognize(recon.mel)
            e_recon = embed_mel80(recon.mel, store, judge)
            row = EvalRow(
                utt_id=entry.utt_id,
                system=system,
                cosine=speaker_similarity(e_recon, refs),
                per=phoneme_error_rate(hyp, intended),
                mel_dtw=dtw_mel_distortion(recon.mel, rec.mel80),
                f_d=(
                    discriminator_score(disc_net, recon.mel_norm)
                    if disc_net is not None
                    else float("nan")
                ),
            )
            rows.append(row)
            per_rows.append(row)
        aggregates[system] = {
            "n": len(per_rows),
            "cosine": float(np.mean([r.cosine for r in per_rows])),
            "per": float(np.mean([r.per for r in per_rows])),
            "mel_dtw": float(np.mean([r.mel_dtw for r in per_rows])),
            "f_d": float(np.nanmean([r.f_d for r in per_rows])),
        }

    judge_prosody = bundles.get("SV-DSR", judge_bundle)
    aggregates["prosody"] = evaluate_prosody(
        store, judge_prosody, encoder=prosody_encoder
    )
    return EvalReport(rows=rows, aggregates=aggregates)
