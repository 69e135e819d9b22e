"""Synthetic toy corpus: formant-template phonemes, speaker profiles, manifests.

Each phoneme is a fixed two-resonance template excited by an impulse train at
the speaker's F0 (voiced) or by noise (unvoiced), so phoneme identity, speaker
identity and prosody are independently controllable and every label, duration
and F0 contour is exact by construction.

All randomness derives from ``(seed, stream, index)`` tuples fed to fresh
numpy generators, so generation is a pure function of the config: parallel or
repeated runs produce bit-identical corpora.

Dysarthria simulation: durations stretched by ``tempo_factor``, the log-F0
contour compressed toward the speaker mean by ``pitch_flatten``, and phoneme
realizations substituted at ``substitution_rate``. A substituted occurrence is
rendered with a blend of its own resonance template and a fixed per-speaker
confusion target (same voicing class), i.e. systematically imprecise
articulation: a healthy-template recognizer misreads it, while a model trained
on this speaker can still recover the intended phoneme. Labels and alignments
always record the intended symbols.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

from .errors import ManifestError, MissingFileError
from .features import SAMPLE_RATE, FrameConfig
from .phonemes import EOS, SILENCE, PhonemeInventory

HOP = 160
WINDOW = 400

ROLE_HEALTHY = "healthy"
ROLE_REFERENCE = "prosody_reference"
ROLE_DYSARTHRIC = "dysarthric"
ROLES = (ROLE_HEALTHY, ROLE_REFERENCE, ROLE_DYSARTHRIC)

# rng stream tags
_STREAM_SPEAKER = 1
_STREAM_PLAN = 2
_STREAM_SUBST = 3
_STREAM_NOISE = 4
_STREAM_CONTOUR = 5


@dataclass(frozen=True)
class PhonemeTemplate:
    voiced: bool
    formants: tuple[tuple[float, float], ...]  # (center_hz, bandwidth_hz)
    gain: float
    base_duration: int  # frames at healthy tempo


#: How far a substituted realization moves toward its confusion target.
SUBSTITUTION_BLEND = 0.85


def blend_templates(
    source: PhonemeTemplate, target: PhonemeTemplate, blend: float = SUBSTITUTION_BLEND
) -> PhonemeTemplate:
    """Resonances interpolated toward the target: imprecise articulation."""
    pairs = zip(source.formants, target.formants)
    formants = tuple(
        (
            (1.0 - blend) * fs + blend * ft,
            (1.0 - blend) * bs + blend * bt,
        )
        for (fs, bs), (ft, bt) in pairs
    )
    return PhonemeTemplate(
        voiced=source.voiced,
        formants=formants,
        gain=(1.0 - blend) * source.gain + blend * target.gain,
        base_duration=source.base_duration,
    )


TEMPLATES: dict[str, PhonemeTemplate] = {
    SILENCE: PhonemeTemplate(False, ((3000.0, 4000.0),), 0.004, 6),
    "aa": PhonemeTemplate(True, ((760.0, 90.0), (1250.0, 110.0)), 0.50, 12),
    "ee": PhonemeTemplate(True, ((520.0, 80.0), (1900.0, 120.0)), 0.50, 12),
    "ii": PhonemeTemplate(True, ((290.0, 70.0), (2450.0, 140.0)), 0.45, 12),
    "oh": PhonemeTemplate(True, ((560.0, 85.0), (890.0, 100.0)), 0.50, 12),
    "uu": PhonemeTemplate(True, ((310.0, 70.0), (680.0, 90.0)), 0.45, 12),
    "mm": PhonemeTemplate(True, ((250.0, 70.0), (1080.0, 150.0)), 0.32, 10),
    "nn": PhonemeTemplate(True, ((280.0, 70.0), (1620.0, 160.0)), 0.32, 10),
    "ss": PhonemeTemplate(False, ((6000.0, 1600.0),), 0.22, 8),
    "sh": PhonemeTemplate(False, ((2700.0, 1100.0),), 0.25, 8),
    "ff": PhonemeTemplate(False, ((1300.0, 900.0),), 0.18, 8),
}


@dataclass(frozen=True)
class DysarthriaProfile:
    tempo_factor: float = 1.8
    pitch_flatten: float = 0.6
    substitution_rate: float = 0.15

    def __post_init__(self):
        if self.tempo_factor < 1.0:
            raise ValueError("tempo_factor must be >= 1")
        if not 0.0 <= self.pitch_flatten <= 1.0:
            raise ValueError("pitch_flatten must be in [0, 1]")
        if not 0.0 <= self.substitution_rate <= 1.0:
            raise ValueError("substitution_rate must be in [0, 1]")


@dataclass(frozen=True)
class ToyCorpusConfig:
    n_healthy_speakers: int = 8
    n_dysarthric_speakers: int = 2
    utterances_per_speaker: int = 40
    phoneme_inventory_size: int = 10
    seed: int = 1234
    dysarthria_profile: DysarthriaProfile = field(default_factory=DysarthriaProfile)

    def __post_init__(self):
        if min(
            self.n_healthy_speakers,
            self.n_dysarthric_speakers,
            self.utterances_per_speaker,
            self.phoneme_inventory_size,
        ) < 1:
            raise ValueError("all corpus counts must be >= 1")

    @property
    def inventory(self) -> PhonemeInventory:
        return PhonemeInventory.toy(self.phoneme_inventory_size)

    @property
    def reference_utterances(self) -> int:
        # The prosody reference speaker gets twice the per-speaker budget.
        return 2 * self.utterances_per_speaker


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    role: str
    base_f0: float
    tilt: float
    formant_scale: float
    substitution_map: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class UtterancePlan:
    """Profile-independent utterance content: intended labels + base prosody."""

    labels: tuple[str, ...]  # includes leading/trailing silence
    base_durations: np.ndarray  # frames per phoneme at healthy tempo


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    speaker: str
    role: str
    wav: str
    alignment: str
    labels: str
    f0: str
    n_frames: int


@dataclass(frozen=True)
class Manifest:
    root: Path
    inventory: PhonemeInventory
    seed: int
    entries: tuple[ManifestEntry, ...]

    def by_role(self, role: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.role == role]

    def by_speaker(self, speaker: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.speaker == speaker]

    @property
    def speakers(self) -> list[str]:
        seen = []
        for e in self.entries:
            if e.speaker not in seen:
                seen.append(e.speaker)
        return seen

    def path(self, relative: str) -> Path:
        return self.root / relative


# --------------------------------------------------------------------------
# Speaker and utterance sampling
# --------------------------------------------------------------------------


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, index])


def speaker_profiles(cfg: ToyCorpusConfig) -> list[SpeakerProfile]:
    """Healthy speakers inside a parameter box; dysarthric ones outside it."""
    profiles = []
    for k in range(cfg.n_healthy_speakers):
        rng = _rng(cfg.seed, _STREAM_SPEAKER, k)
        profiles.append(
            SpeakerProfile(
                speaker_id=f"h{k:02d}",
                role=ROLE_HEALTHY,
                base_f0=float(np.exp(rng.uniform(np.log(115.0), np.log(245.0)))),
                tilt=float(rng.uniform(-0.40, 0.45)),
                formant_scale=float(rng.uniform(0.96, 1.04)),
            )
        )
    ref_rng = _rng(cfg.seed, _STREAM_SPEAKER, 1000)
    profiles.append(
        SpeakerProfile(
            speaker_id="ref",
            role=ROLE_REFERENCE,
            base_f0=float(np.exp(ref_rng.uniform(np.log(150.0), np.log(210.0)))),
            tilt=float(ref_rng.uniform(-0.2, 0.2)),
            formant_scale=float(ref_rng.uniform(0.97, 1.03)),
        )
    )
    phones = list(cfg.inventory.symbols[1:-1])
    for k in range(cfg.n_dysarthric_speakers):
        rng = _rng(cfg.seed, _STREAM_SPEAKER, 2000 + k)
        low_pitch = k % 2 == 0
        base_f0 = 90.0 * np.exp(rng.uniform(-0.05, 0.05))
        if not low_pitch:
            base_f0 = 290.0 * np.exp(rng.uniform(-0.05, 0.05))
        subst = {}
        for p in phones:
            same_class = [
                q
                for q in phones
                if q != p and TEMPLATES[q].voiced == TEMPLATES[p].voiced
            ]
            subst[p] = str(rng.choice(same_class)) if same_class else p
        profiles.append(
            SpeakerProfile(
                speaker_id=f"d{k:02d}",
                role=ROLE_DYSARTHRIC,
                base_f0=float(base_f0),
                tilt=float(0.80 if low_pitch else -0.72),
                formant_scale=float(0.94 if low_pitch else 1.07),
                substitution_map=subst,
            )
        )
    return profiles


def utterance_plan(cfg: ToyCorpusConfig, utt_index: int) -> UtterancePlan:
    """Draw intended labels and healthy-tempo durations for one utterance."""
    rng = _rng(cfg.seed, _STREAM_PLAN, utt_index)
    phones = cfg.inventory.symbols[1:-1]
    n_core = int(rng.integers(4, 8))
    core: list[str] = []
    while len(core) < n_core:
        candidate = str(rng.choice(phones))
        # Immediate repeats render as one long segment with no boundary cue,
        # which no recognizer could split; skip them.
        if core and candidate == core[-1]:
            continue
        core.append(candidate)
    labels = (SILENCE, *core, SILENCE)
    durations = []
    for sym in labels:
        base = TEMPLATES[sym].base_duration
        jitter = float(np.exp(rng.normal(0.0, 0.12)))
        durations.append(max(2, int(round(base * jitter))))
    return UtterancePlan(labels, np.array(durations, dtype=np.int64))


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------


def _resonator_sos(formants, formant_scale: float, sr: int) -> np.ndarray:
    sections = []
    for freq, bw in formants:
        freq = min(freq * formant_scale, 0.45 * sr)
        r = np.exp(-np.pi * bw / sr)
        theta = 2.0 * np.pi * freq / sr
        sections.append([1.0 - r, 0.0, 0.0, 1.0, -2.0 * r * np.cos(theta), r * r])
    return np.array(sections)


def render_f0_contour(
    plan_durations: np.ndarray,
    labels,
    speaker: SpeakerProfile,
    contour_rng: np.random.Generator,
    pitch_flatten: float = 0.0,
) -> np.ndarray:
    """Per-frame F0 in Hz (0 on unvoiced frames): declination + AR(1) wiggle."""
    total = int(plan_durations.sum())
    decline = np.linspace(np.log(1.06), np.log(0.92), total)
    noise = np.zeros(total)
    for t in range(1, total):
        noise[t] = 0.9 * noise[t - 1] + contour_rng.normal(0.0, 0.013)
    log_f0 = np.log(speaker.base_f0) + decline + noise
    mean_log = float(np.mean(log_f0))
    log_f0 = mean_log + (1.0 - pitch_flatten) * (log_f0 - mean_log)
    f0 = np.exp(log_f0)
    voiced = np.repeat(
        [TEMPLATES[s].voiced for s in labels], plan_durations
    )
    return np.where(voiced, f0, 0.0)


def render_audio(
    rendered_labels,
    durations: np.ndarray,
    f0_hz: np.ndarray,
    speaker: SpeakerProfile,
    noise_rng: np.random.Generator,
    sr: int = SAMPLE_RATE,
    realized_templates: list[PhonemeTemplate] | None = None,
) -> np.ndarray:
    """Synthesize one utterance; length = WINDOW + (sum(durations)-1)*HOP.

    ``realized_templates`` overrides the per-position resonance templates
    (used for dysarthric articulation); defaults to each label's template.
    """
    total_frames = int(durations.sum())
    n = WINDOW + (total_frames - 1) * HOP
    per_sample_f0 = np.repeat(f0_hz, HOP)
    per_sample_f0 = np.concatenate(
        [per_sample_f0, np.full(n - per_sample_f0.shape[0], per_sample_f0[-1])]
    )
    audio = np.zeros(n)
    fade = int(0.004 * sr)
    ramp = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, fade))

    phase = 0.0
    frame_cursor = 0
    boundaries = np.cumsum(durations)
    for i, sym in enumerate(rendered_labels):
        template = (
            realized_templates[i] if realized_templates is not None else TEMPLATES[sym]
        )
        lo = frame_cursor * HOP
        hi = n if i == len(rendered_labels) - 1 else int(boundaries[i]) * HOP
        frame_cursor = int(boundaries[i])
        seg_len = hi - lo
        if template.voiced:
            excitation = np.zeros(seg_len)
            for j in range(seg_len):
                phase += per_sample_f0[lo + j] / sr
                if phase >= 1.0:
                    phase -= 1.0
                    excitation[j] = 1.0
        else:
            excitation = noise_rng.standard_normal(seg_len)
        seg = sps.sosfilt(
            _resonator_sos(template.formants, speaker.formant_scale, sr), excitation
        )
        rms = float(np.sqrt(np.mean(seg**2)))
        seg = seg * (template.gain / max(rms, 1e-9))
        if seg_len > 2 * fade:
            seg[:fade] *= ramp
            seg[-fade:] *= ramp[::-1]
        audio[lo:hi] += seg
    # Speaker spectral tilt: one-pole filter, positive tilt darkens the voice.
    audio = sps.lfilter([1.0 - abs(speaker.tilt) * 0.5], [1.0, -speaker.tilt], audio)
    peak = float(np.max(np.abs(audio)))
    if peak > 0:
        audio = audio * (0.60 / max(peak, 0.60))
    return audio


def render_utterance(
    cfg: ToyCorpusConfig,
    plan: UtterancePlan,
    speaker: SpeakerProfile,
    utt_index: int,
    profile: DysarthriaProfile | None,
):
    """Apply the dysarthria profile (if any) and synthesize.

    Returns (durations, f0_hz, audio, substituted_mask). A substituted
    position keeps its intended label but is rendered with the speaker's
    blended confusion template; labels/alignments always stay intended.
    """
    labels = list(plan.labels)
    templates = [TEMPLATES[sym] for sym in labels]
    substituted = np.zeros(len(labels), dtype=bool)
    if profile is None:
        durations = plan.base_durations.copy()
        flatten = 0.0
    else:
        durations = np.maximum(
            1, np.round(plan.base_durations * profile.tempo_factor)
        ).astype(np.int64)
        subst_rng = _rng(cfg.seed, _STREAM_SUBST, utt_index)
        for i, sym in enumerate(labels):
            draw = subst_rng.random()
            if sym in speaker.substitution_map and draw < profile.substitution_rate:
                substituted[i] = True
                templates[i] = blend_templates(
                    TEMPLATES[sym], TEMPLATES[speaker.substitution_map[sym]]
                )
        flatten = profile.pitch_flatten
    contour_rng = _rng(cfg.seed, _STREAM_CONTOUR, utt_index)
    f0_hz = render_f0_contour(durations, labels, speaker, contour_rng, flatten)
    noise_rng = _rng(cfg.seed, _STREAM_NOISE, utt_index)
    audio = render_audio(
        labels, durations, f0_hz, speaker, noise_rng, realized_templates=templates
    )
    return durations, f0_hz, audio, substituted


# --------------------------------------------------------------------------
# Corpus writer
# --------------------------------------------------------------------------


def synthesize_toy_corpus(cfg: ToyCorpusConfig, out_dir) -> Path:
    """Generate audio + ground truth under ``out_dir``; returns manifest path."""
    root = Path(out_dir)
    for sub in ("wav", "align", "labels", "f0"):
        try:
            (root / sub).mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ManifestError(f"cannot create corpus directory: {exc}") from exc

    profiles = speaker_profiles(cfg)
    entries = []
    utt_index = 0
    for speaker in profiles:
        count = (
            cfg.reference_utterances
            if speaker.role == ROLE_REFERENCE
            else cfg.utterances_per_speaker
        )
        profile = (
            cfg.dysarthria_profile if speaker.role == ROLE_DYSARTHRIC else None
        )
        for u in range(count):
            plan = utterance_plan(cfg, utt_index)
            durations, f0_hz, audio, _ = render_utterance(
                cfg, plan, speaker, utt_index, profile
            )
            utt_id = f"{speaker.speaker_id}_u{u:03d}"
            wav_rel = f"wav/{utt_id}.wav"
            align_rel = f"align/{utt_id}.tsv"
            labels_rel = f"labels/{utt_id}.txt"
            f0_rel = f"f0/{utt_id}.txt"
            pcm = np.clip(np.round(audio * 32767.0), -32768, 32767).astype(np.int16)
            try:
                wavfile.write(root / wav_rel, SAMPLE_RATE, pcm)
                with open(root / align_rel, "w", encoding="utf-8") as fh:
                    for sym, dur in zip(plan.labels, durations):
                        fh.write(f"{sym}\t{int(dur)}\n")
                with open(root / labels_rel, "w", encoding="utf-8") as fh:
                    fh.write(" ".join(plan.labels) + "\n")
                with open(root / f0_rel, "w", encoding="utf-8") as fh:
                    fh.write("\n".join(f"{v:.6f}" for v in f0_hz) + "\n")
            except OSError as exc:
                raise ManifestError(f"cannot write corpus files: {exc}") from exc
            entries.append(
                ManifestEntry(
                    utt_id=utt_id,
                    speaker=speaker.speaker_id,
                    role=speaker.role,
                    wav=wav_rel,
                    alignment=align_rel,
                    labels=labels_rel,
                    f0=f0_rel,
                    n_frames=int(durations.sum()),
                )
            )
            utt_index += 1

    manifest_path = root / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        header = {
            "record": "header",
            "version": 1,
            "seed": cfg.seed,
            "phoneme_inventory": list(cfg.inventory.symbols),
        }
        fh.write(json.dumps(header) + "\n")
        for e in entries:
            record = {"record": "utterance", **e.__dict__}
            fh.write(json.dumps(record) + "\n")
    return manifest_path


def load_manifest(path) -> Manifest:
    """Load and fully validate a corpus manifest."""
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"manifest not found: {path}")
    root = path.parent
    entries = []
    inventory = None
    seed = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON") from exc
            kind = record.get("record")
            if kind == "header":
                if record.get("version") != 1:
                    raise ManifestError(
                        f"unsupported manifest version: {record.get('version')}"
                    )
                inventory = PhonemeInventory(tuple(record["phoneme_inventory"]))
                seed = int(record.get("seed", 0))
            elif kind == "utterance":
                try:
                    entries.append(
                        ManifestEntry(
                            utt_id=record["utt_id"],
                            speaker=record["speaker"],
                            role=record["role"],
                            wav=record["wav"],
                            alignment=record["alignment"],
                            labels=record["labels"],
                            f0=record["f0"],
                            n_frames=int(record["n_frames"]),
                        )
                    )
                except KeyError as exc:
                    raise ManifestError(
                        f"line {lineno}: missing field {exc}"
                    ) from exc
            else:
                raise ManifestError(f"line {lineno}: unknown record kind {kind!r}")
    if inventory is None:
        raise ManifestError("manifest has no header record")
    if not entries:
        raise ManifestError("manifest lists no utterances")
    reference_speakers = {
        e.speaker for e in entries if e.role == ROLE_REFERENCE
    }
    if len(reference_speakers) != 1:
        raise ManifestError(
            f"expected exactly one prosody_reference speaker, "
            f"got {sorted(reference_speakers)}"
        )
    for e in entries:
        if e.role not in ROLES:
            raise ManifestError(f"{e.utt_id}: unknown role {e.role!r}")
        for rel in (e.wav, e.alignment, e.labels, e.f0):
            if not (root / rel).exists():
                raise MissingFileError(f"{e.utt_id}: missing file {rel}")
    return Manifest(root, inventory, seed, tuple(entries))


def read_wav(path) -> np.ndarray:
    sr, pcm = wavfile.read(path)
    if sr != SAMPLE_RATE:
        raise ManifestError(f"{path}: expected {SAMPLE_RATE} Hz audio, got {sr}")
    return pcm.astype(np.float64) / 32767.0


def read_labels(path, inventory: PhonemeInventory) -> list[str]:
    text = Path(path).read_text(encoding="utf-8").split()
    unknown = [s for s in text if s not in inventory.symbols or s == EOS]
    if unknown:
        raise ManifestError(f"{path}: unknown label symbols {unknown}")
    return text


def frame_config(n_mels: int = 40) -> FrameConfig:
    return FrameConfig(fft_size=400, window_len=WINDOW, hop_len=HOP, n_mels=n_mels)
