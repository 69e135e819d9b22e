import pytest

from dsr import evaluate as ev
from dsr import pipeline as pl
from dsr.config import Settings

ACCEPTANCE_SEED = 1234


@pytest.fixture(scope="session")
def smoke_settings(tmp_path_factory):
    workdir = tmp_path_factory.mktemp("smoke_ws")
    settings = Settings(profile="smoke", workdir=workdir, seed=7)
    pl.gen_corpus(settings)
    pl.build_feature_store(settings)
    return settings


@pytest.fixture(scope="session")
def smoke_store(smoke_settings):
    return pl.open_feature_store(smoke_settings)


class AcceptanceRun:
    """One full desk-profile pipeline run shared by the acceptance and
    trained-quality test modules (built once per session, ~15-20 min CPU)."""

    def __init__(self, workdir):
        self.settings = Settings(
            profile="desk", workdir=workdir, seed=ACCEPTANCE_SEED
        )
        pl.gen_corpus(self.settings)
        self.store = pl.build_feature_store(self.settings)
        self.phi_p, self.pretrain_report = pl.stage_pretrain(
            self.settings, self.store
        )
        self.speakers = sorted(
            {e.speaker for e in self.store.entries(role="dysarthric")}
        )
        self.phi_sd = {}
        self.finetune_reports = {}
        for spk in self.speakers:
            self.phi_sd[spk], self.finetune_reports[spk] = pl.stage_finetune(
                self.settings, self.store, spk
            )
        (
            self.duration,
            self.pitch,
            self.duration_report,
            self.pitch_report,
        ) = pl.stage_prosody(self.settings, self.store)
        self.speaker_sv, self.speaker_report = pl.stage_speaker(
            self.settings, self.store
        )
        self.generator, self.generator_report = pl.stage_generator(
            self.settings, self.store
        )
        self.sv_bundles = {}
        self.asa_bundles = {}
        self.asa_states = {}
        self.asa_reports = {}
        for spk in self.speakers:
            sv, asab, state, report = pl.stage_asa(
                self.settings, self.store, spk, checksum_every=50
            )
            self.sv_bundles[spk] = sv
            self.asa_bundles[spk] = asab
            self.asa_states[spk] = state
            self.asa_reports[spk] = report
        self.eval_reports = {}
        for spk in self.speakers:
            self.eval_reports[spk] = ev.evaluate_systems(
                self.store,
                spk,
                {"SV-DSR": self.sv_bundles[spk], "ASA-DSR": self.asa_bundles[spk]},
                judge_bundle=self.sv_bundles[spk],
                disc_net=self.asa_states[spk].discriminator.net,
                prosody_encoder=self.phi_p,
            )


@pytest.fixture(scope="session")
def acceptance_run(tmp_path_factory):
    return AcceptanceRun(tmp_path_factory.mktemp("acceptance_ws"))


@pytest.fixture(scope="session")
def smoke_components(smoke_settings, smoke_store):
    """All smoke-profile stages run once; shared by training/ASA tests."""
    settings, store = smoke_settings, smoke_store
    phi_p, _ = pl.stage_pretrain(settings, store)
    speaker = store.entries(role="dysarthric")[0].speaker
    phi_sd, _ = pl.stage_finetune(settings, store, speaker)
    duration, pitch, _, _ = pl.stage_prosody(settings, store)
    speaker_sv, _ = pl.stage_speaker(settings, store)
    generator, _ = pl.stage_generator(settings, store)
    sv_bundle = pl.assemble_sv_bundle(settings, speaker)
    return {
        "settings": settings,
        "store": store,
        "speaker": speaker,
        "phi_p": phi_p,
        "phi_sd": phi_sd,
        "duration": duration,
        "pitch": pitch,
        "speaker_sv": speaker_sv,
        "generator": generator,
        "sv_bundle": sv_bundle,
    }
