"""Run settings: profiles, stage configs, and the key=value config file.

Profiles bundle step counts and optimizer settings per stage. ``desk`` is the
laptop-scale default used by the test suite; ``full`` records the real-scale
settings and is never run by tests; ``smoke`` is a seconds-scale profile for
end-to-end plumbing checks.

Config file format (UTF-8 text, '#' comments):

    seed = 1234
    profile = desk
    workdir = runs/toy
    corpus.n_healthy_speakers = 8
    corpus.tempo_factor = 1.8
    stage.pretrain.steps = 500
    model.speaker_hidden = 64
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .corpus import DysarthriaProfile, ToyCorpusConfig
from .errors import ConfigError

STAGES = (
    "pretrain",
    "finetune",
    "duration",
    "pitch",
    "speaker",
    "generator",
    "asa",
)

#: Deterministic per-stage seed offsets relative to the global seed.
STAGE_SEED_OFFSET = {
    "pretrain": 11,
    "finetune": 12,
    "duration": 13,
    "pitch": 14,
    "speaker": 15,
    "generator": 16,
    "asa": 17,
}


@dataclass(frozen=True)
class StageConfig:
    name: str
    optimizer: str
    learning_rate: float
    batch_size: int
    steps: int
    seed: int

    def __post_init__(self):
        if self.optimizer not in ("adadelta", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.steps <= 0:
            raise ConfigError("steps must be positive")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")


_DESK = {
    "pretrain": dict(optimizer="adadelta", learning_rate=1.0, batch_size=8, steps=2000),
    "finetune": dict(optimizer="adadelta", learning_rate=1.0, batch_size=8, steps=300),
    "duration": dict(optimizer="adam", learning_rate=1e-3, batch_size=16, steps=1000),
    "pitch": dict(optimizer="adam", learning_rate=1e-3, batch_size=16, steps=1000),
    "speaker": dict(optimizer="adam", learning_rate=1e-3, batch_size=16, steps=1500),
    "generator": dict(optimizer="adam", learning_rate=1e-3, batch_size=16, steps=2000),
    "asa": dict(optimizer="adam", learning_rate=1e-4, batch_size=8, steps=500),
}

_FULL = {
    "pretrain": dict(optimizer="adadelta", learning_rate=1.0, batch_size=8, steps=1_000_000),
    "finetune": dict(optimizer="adadelta", learning_rate=1.0, batch_size=8, steps=2_000),
    "duration": dict(optimizer="adam", learning_rate=1e-3, batch_size=16, steps=30_000),
    "pitch": dict(optimizer="adam", learning_rate=1e-3, batch_size=16, steps=30_000),
    "speaker": dict(optimizer="adam", learning_rate=1e-3, batch_size=16, steps=50_000),
    "generator": dict(optimizer="adam", learning_rate=1e-3, batch_size=16, steps=50_000),
    "asa": dict(optimizer="adam", learning_rate=1e-4, batch_size=8, steps=5_000),
}

_SMOKE = {
    "pretrain": dict(optimizer="adadelta", learning_rate=1.0, batch_size=4, steps=6),
    "finetune": dict(optimizer="adadelta", learning_rate=1.0, batch_size=4, steps=3),
    "duration": dict(optimizer="adam", learning_rate=1e-3, batch_size=4, steps=4),
    "pitch": dict(optimizer="adam", learning_rate=1e-3, batch_size=4, steps=4),
    "speaker": dict(optimizer="adam", learning_rate=1e-3, batch_size=4, steps=4),
    "generator": dict(optimizer="adam", learning_rate=1e-3, batch_size=4, steps=4),
    "asa": dict(optimizer="adam", learning_rate=1e-4, batch_size=4, steps=3),
}

PROFILES = {"desk": _DESK, "full": _FULL, "smoke": _SMOKE}

_MODEL_DESK = {
    "speech_width": 128,
    "speaker_hidden": 64,
    "speaker_layers": 3,
    "embedding_dim": 256,
    "generator_width": 128,
    "predictor_width": 64,
    "disc_channels": 16,
    "disc_crop_len": 64,
}

_MODEL_FULL = dict(_MODEL_DESK, speaker_hidden=256, speech_width=256, generator_width=256)

_MODEL_SMOKE = dict(
    _MODEL_DESK,
    speech_width=24,
    speaker_hidden=12,
    embedding_dim=32,
    generator_width=16,
    predictor_width=12,
    disc_channels=4,
    disc_crop_len=16,
)

MODEL_PROFILES = {"desk": _MODEL_DESK, "full": _MODEL_FULL, "smoke": _MODEL_SMOKE}

_CORPUS_SMOKE = dict(
    n_healthy_speakers=4, n_dysarthric_speakers=1, utterances_per_speaker=6
)


@dataclass
class Settings:
    seed: int = 1234
    profile: str = "desk"
    workdir: Path = Path("runs/toy")
    corpus: ToyCorpusConfig = None
    model: dict = None
    stage_overrides: dict = field(default_factory=dict)
    ge2e_speakers: int = 4
    ge2e_utts: int = 4
    speaker_crop_frames: int = 64
    asa_lambda: float = 1.0

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(
                f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}"
            )
        if self.corpus is None:
            base = _CORPUS_SMOKE if self.profile == "smoke" else {}
            self.corpus = ToyCorpusConfig(seed=self.seed, **base)
        if self.model is None:
            self.model = dict(MODEL_PROFILES[self.profile])
        if self.profile == "smoke":
            self.ge2e_speakers = 2
            self.ge2e_utts = 2
            self.speaker_crop_frames = 16
        self.workdir = Path(self.workdir)

    def stage(self, name: str) -> StageConfig:
        if name not in STAGES:
            raise ConfigError(f"unknown stage {name!r}")
        base = dict(PROFILES[self.profile][name])
        base.update(self.stage_overrides.get(name, {}))
        seed = base.pop("seed", self.seed + STAGE_SEED_OFFSET[name])
        return StageConfig(name=name, seed=seed, **base)

    # workspace layout -----------------------------------------------------

    @property
    def corpus_dir(self) -> Path:
        return self.workdir / "corpus"

    @property
    def manifest_path(self) -> Path:
        return self.corpus_dir / "manifest.jsonl"

    @property
    def features_dir(self) -> Path:
        return self.workdir / "features"

    @property
    def checkpoints_dir(self) -> Path:
        return self.workdir / "checkpoints"

    @property
    def reports_dir(self) -> Path:
        return self.workdir / "reports"

    def checkpoint(self, name: str) -> Path:
        return self.checkpoints_dir / f"{name}.ckpt"

    def train_state(self, name: str) -> Path:
        return self.checkpoints_dir / f"{name}.state"


def parse_config_text(text: str) -> dict:
    """Parse 'key = value' lines into a flat string dict."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _coerce(value: str, like) -> object:
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def load_settings(
    config_path=None,
    profile: str | None = None,
    seed: int | None = None,
    workdir=None,
) -> Settings:
    """Build Settings from an optional config file plus explicit overrides.

    Precedence: explicit arguments > config file > profile defaults.
    """
    values = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        values = parse_config_text(path.read_text(encoding="utf-8"))

    chosen_profile = profile or values.get("profile", "desk")
    chosen_seed = seed if seed is not None else int(values.get("seed", 1234))
    chosen_workdir = workdir or values.get("workdir", "runs/toy")

    settings = Settings(
        seed=chosen_seed, profile=chosen_profile, workdir=chosen_workdir
    )

    corpus_kwargs = {}
    profile_kwargs = {}
    for key, value in values.items():
        if key in ("profile", "seed", "workdir"):
            continue
        parts = key.split(".")
        if parts[0] == "corpus" and len(parts) == 2:
            name = parts[1]
            if name in ("tempo_factor", "pitch_flatten", "substitution_rate"):
                profile_kwargs[name] = float(value)
            elif hasattr(settings.corpus, name):
                corpus_kwargs[name] = _coerce(value, getattr(settings.corpus, name))
            else:
                raise ConfigError(f"unknown corpus key {key!r}")
        elif parts[0] == "stage" and len(parts) == 3:
            stage, option = parts[1], parts[2]
            if stage not in STAGES:
                raise ConfigError(f"unknown stage in key {key!r}")
            template = PROFILES[settings.profile][stage]
            if option == "seed":
                settings.stage_overrides.setdefault(stage, {})[option] = int(value)
            elif option in template:
                settings.stage_overrides.setdefault(stage, {})[option] = _coerce(
                    value, template[option]
                )
            else:
                raise ConfigError(f"unknown stage option {key!r}")
        elif parts[0] == "model" and len(parts) == 2:
            name = parts[1]
            if name not in settings.model:
                raise ConfigError(f"unknown model key {key!r}")
            settings.model[name] = _coerce(value, settings.model[name])
        elif parts[0] == "ge2e" and len(parts) == 2 and parts[1] in ("speakers", "utts"):
            setattr(settings, f"ge2e_{parts[1]}", int(value))
        else:
            raise ConfigError(f"unknown config key {key!r}")

    if corpus_kwargs or profile_kwargs:
        dys = settings.corpus.dysarthria_profile
        if profile_kwargs:
            dys = replace(dys, **profile_kwargs)
        settings.corpus = replace(
            settings.corpus,
            dysarthria_profile=dys,
            **{**corpus_kwargs, "seed": corpus_kwargs.get("seed", settings.corpus.seed)},
        )
    return settings
