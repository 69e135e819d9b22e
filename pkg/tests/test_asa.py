import numpy as np
import pytest
import torch

from dsr import asa as asa_mod
from dsr import training as tr
from dsr.config import StageConfig
from dsr.errors import CorpusError, FrozenParameterError
from dsr.losses import discrimination_loss


def asa_cfg(steps, seed=200, batch=3):
    return StageConfig(
        name="asa",
        optimizer="adam",
        learning_rate=1e-4,
        batch_size=batch,
        steps=steps,
        seed=seed,
    )


@pytest.fixture(scope="module")
def asa_setup(smoke_components):
    store = smoke_components["store"]
    settings = smoke_components["settings"]
    sv_bundle = smoke_components["sv_bundle"]
    asa_bundle = asa_mod.clone_system(sv_bundle)
    cfg = asa_cfg(steps=3)
    state = asa_mod.init_asa(sv_bundle, asa_bundle, cfg, settings.model)
    entries = store.entries(
        role="dysarthric", split="train", speaker=smoke_components["speaker"]
    )
    samples = asa_mod.prepare_adaptation_set(store, sv_bundle, entries)
    return {
        "store": store,
        "settings": settings,
        "sv": sv_bundle,
        "asa": asa_bundle,
        "cfg": cfg,
        "state": state,
        "samples": samples,
        "speaker": smoke_components["speaker"],
    }


class TestClone:
    def test_clone_checksums_equal(self, smoke_components):
        sv = smoke_components["sv_bundle"]
        clone = asa_mod.clone_system(sv)
        assert clone.label == "ASA-DSR"
        assert clone.checksums() == sv.checksums()

    def test_mutating_clone_leaves_original(self, smoke_components):
        sv = smoke_components["sv_bundle"]
        before = sv.checksums()
        clone = asa_mod.clone_system(sv)
        with torch.no_grad():
            next(clone.speaker_encoder.net.parameters()).add_(1.0)
        assert sv.checksums() == before
        assert clone.checksums() != before

    def test_step0_reconstruction_bit_identical(self, smoke_components):
        store = smoke_components["store"]
        sv = smoke_components["sv_bundle"]
        clone = asa_mod.clone_system(sv)
        entry = store.entries(role="dysarthric")[0]
        a = tr.reconstruct(store, entry.utt_id, sv, mode="GG")
        b = tr.reconstruct(store, entry.utt_id, clone, mode="GG")
        assert a.mel_norm.tobytes() == b.mel_norm.tobytes()


class TestAdaptationSet:
    def test_frame_invariants(self, asa_setup):
        for sample in asa_setup["samples"]:
            assert sample.p.shape[0] == sample.m80.shape[0]
            assert sample.v.shape[0] == sample.m80.shape[0]
            assert sample.p_tilde.shape[0] == sample.v_tilde.shape[0]
            assert sample.z_sv_tilde.shape == (sample.p_tilde.shape[0], 80)

    def test_deterministic(self, asa_setup):
        store = asa_setup["store"]
        entries = store.entries(
            role="dysarthric", split="train", speaker=asa_setup["speaker"]
        )
        again = asa_mod.prepare_adaptation_set(store, asa_setup["sv"], entries)
        for a, b in zip(asa_setup["samples"], again):
            assert torch.equal(a.p, b.p)
            assert torch.equal(a.p_tilde, b.p_tilde)
            assert torch.equal(a.z_sv_tilde, b.z_sv_tilde)

    def test_missing_alignment_rejected(self, asa_setup):
        store = asa_setup["store"]
        entry = store.entries(
            role="dysarthric", split="train", speaker=asa_setup["speaker"]
        )[0]
        record = store.record(entry.utt_id)
        doctored = type(record)(
            **{**record.__dict__, "durations": np.zeros(0, dtype=np.int64)}
        )
        original = store._cache.get(entry.utt_id)
        store._cache[entry.utt_id] = doctored
        try:
            with pytest.raises(CorpusError, match="alignment"):
                asa_mod.prepare_adaptation_set(store, asa_setup["sv"], [entry])
        finally:
            store._cache[entry.utt_id] = original


class TestForwardTriple:
    def test_step0_sv_equals_asa(self, smoke_components, asa_setup):
        sv = smoke_components["sv_bundle"]
        asa_bundle = asa_mod.clone_system(sv)
        cfg = asa_cfg(steps=1, seed=9)
        state = asa_mod.init_asa(
            sv, asa_bundle, cfg, asa_setup["settings"].model
        )
        sample = asa_setup["samples"][0]
        z_sv, z_asa_tilde, z_asa = asa_mod.forward_triple(sample, state)
        assert torch.equal(z_sv, z_asa_tilde)
        assert z_asa.shape == sample.m80.shape
        assert z_asa_tilde.shape[0] == sample.p_tilde.shape[0]

    def test_sv_path_independent_of_adapted_encoder(self, asa_setup):
        sample = asa_setup["samples"][0]
        state = asa_setup["state"]
        z_sv_before, _, _ = asa_mod.forward_triple(sample, state)
        with torch.no_grad():
            next(state.speaker_encoder.net.parameters()).add_(0.37)
        z_sv_after, z_asa_tilde, _ = asa_mod.forward_triple(sample, state)
        with torch.no_grad():
            next(state.speaker_encoder.net.parameters()).sub_(0.37)
        assert torch.equal(z_sv_before, z_sv_after)

    def test_sv_term_gradient_is_structurally_zero(self, asa_setup):
        # Build log(1 - f_d(z_sv)) with the adapted encoder marked trainable:
        # no dataflow exists, so gradients must be None (exactly zero).
        state = asa_setup["state"]
        sample = asa_setup["samples"][0]
        disc = state.discriminator.net
        from dsr.nets.discriminator import crop_or_tile

        crop = crop_or_tile(sample.z_sv_tilde, disc.crop_len, 5)
        term = torch.log(1.0 - disc(crop))
        grads = torch.autograd.grad(
            term,
            list(state.speaker_encoder.net.parameters()),
            allow_unused=True,
            retain_graph=False,
        )
        assert all(g is None for g in grads)


class TestAsaStep:
    def test_updates_only_trainable_sets(self, smoke_components, asa_setup):
        sv = smoke_components["sv_bundle"]
        asa_bundle = asa_mod.clone_system(sv)
        cfg = asa_cfg(steps=1, seed=42)
        state = asa_mod.init_asa(sv, asa_bundle, cfg, asa_setup["settings"].model)
        frozen_before = dict(state.frozen_checksums)
        spk_before = state.speaker_encoder.checksum()
        disc_before = state.discriminator.checksum()
        rng = np.random.default_rng(0)
        losses = asa_mod.asa_step(asa_setup["samples"][:3], state, rng)
        assert state.speaker_encoder.checksum() != spk_before
        assert state.discriminator.checksum() != disc_before
        state.verify_frozen()
        assert {n: p.checksum() for n, p in state.frozen.items()} == frozen_before
        for key in ("loss_adapt", "loss_dis", "loss_mtl"):
            assert np.isfinite(losses[key])
        assert losses["loss_mtl"] == pytest.approx(
            losses["loss_adapt"] - state.lam * losses["loss_dis"]
        )

    def test_grl_and_two_pass_gradients_match(self, smoke_components, asa_setup):
        sv = smoke_components["sv_bundle"]
        asa_bundle = asa_mod.clone_system(sv)
        cfg = asa_cfg(steps=1, seed=77)
        state = asa_mod.init_asa(sv, asa_bundle, cfg, asa_setup["settings"].model)
        batch = asa_setup["samples"][:3]
        g1 = asa_mod.speaker_gradients(batch, state, np.random.default_rng(3), "two_pass")
        g2 = asa_mod.speaker_gradients(batch, state, np.random.default_rng(3), "grl")
        for a, b in zip(g1, g2):
            denom = a.norm() + b.norm()
            if float(denom) == 0.0:
                continue
            assert float((a - b).norm() / denom) < 1e-6

    def test_frozen_violation_detected(self, smoke_components, asa_setup):
        sv = smoke_components["sv_bundle"]
        asa_bundle = asa_mod.clone_system(sv)
        cfg = asa_cfg(steps=1, seed=5)
        state = asa_mod.init_asa(sv, asa_bundle, cfg, asa_setup["settings"].model)
        with torch.no_grad():
            next(state.frozen["generator"].net.parameters()).add_(1.0)
        with pytest.raises(FrozenParameterError):
            state.verify_frozen()
        with torch.no_grad():
            next(state.frozen["generator"].net.parameters()).sub_(1.0)


class TestRunAsa:
    def test_empty_adaptation_set_rejected(self, asa_setup):
        with pytest.raises(CorpusError):
            asa_mod.run_asa([], asa_setup["state"], asa_cfg(steps=1))

    def test_traces_and_freezing_log(self, smoke_components, asa_setup):
        sv = smoke_components["sv_bundle"]
        asa_bundle = asa_mod.clone_system(sv)
        cfg = asa_cfg(steps=4, seed=11)
        state = asa_mod.init_asa(sv, asa_bundle, cfg, asa_setup["settings"].model)
        report = asa_mod.run_asa(
            asa_setup["samples"], state, cfg, checksum_every=2
        )
        assert len(report.losses) == 4
        assert all(
            set(l) >= {"loss_adapt", "loss_dis", "loss_mtl"} for l in report.losses
        )
        log = report.extras["frozen_log"]
        assert [item["step"] for item in log] == [0, 2, 4]
        assert all(item["checksums"] == log[0]["checksums"] for item in log)

    def test_adapted_bundle_differs_only_in_speaker_slot(
        self, smoke_components, asa_setup
    ):
        sv = smoke_components["sv_bundle"]
        asa_bundle = asa_mod.clone_system(sv)
        cfg = asa_cfg(steps=2, seed=13)
        state = asa_mod.init_asa(sv, asa_bundle, cfg, asa_setup["settings"].model)
        asa_mod.run_asa(asa_setup["samples"], state, cfg, checksum_every=0)
        sv_sums = sv.checksums()
        asa_sums = asa_bundle.checksums()
        assert asa_sums["speaker_encoder"] != sv_sums["speaker_encoder"]
        for slot in ("speech_encoder", "duration_predictor", "pitch_predictor", "generator"):
            assert asa_sums[slot] == sv_sums[slot]

    def test_resume_equals_uninterrupted(
        self, smoke_components, asa_setup, tmp_path
    ):
        sv = smoke_components["sv_bundle"]
        samples = asa_setup["samples"]
        model = asa_setup["settings"].model

        full_cfg = asa_cfg(steps=4, seed=21)
        bundle_a = asa_mod.clone_system(sv)
        state_a = asa_mod.init_asa(sv, bundle_a, full_cfg, model)
        report_a = asa_mod.run_asa(samples, state_a, full_cfg, checksum_every=0)

        half_cfg = asa_cfg(steps=2, seed=21)
        bundle_b = asa_mod.clone_system(sv)
        state_b = asa_mod.init_asa(sv, bundle_b, half_cfg, model)
        asa_mod.run_asa(samples, state_b, half_cfg, checksum_every=0)
        asa_mod.save_asa_state(tmp_path / "asa.state", state_b)

        bundle_c = asa_mod.clone_system(sv)
        state_c = asa_mod.load_asa_state(
            tmp_path / "asa.state", sv, bundle_c, full_cfg
        )
        report_c = asa_mod.run_asa(samples, state_c, full_cfg, checksum_every=0)
        assert [l["loss_mtl"] for l in report_c.losses] == [
            l["loss_mtl"] for l in report_a.losses[2:]
        ]
        assert (
            state_c.speaker_encoder.checksum() == state_a.speaker_encoder.checksum()
        )
        assert state_c.discriminator.checksum() == state_a.discriminator.checksum()


class TestAlternationOrder:
    def test_speaker_update_sees_refreshed_discriminator(
        self, smoke_components, asa_setup
    ):
        # The speaker-pass L_dis is evaluated after the discriminator step, so
        # it must differ from the discriminator-pass value once phi moves.
        sv = smoke_components["sv_bundle"]
        asa_bundle = asa_mod.clone_system(sv)
        cfg = asa_cfg(steps=1, seed=31)
        state = asa_mod.init_asa(sv, asa_bundle, cfg, asa_setup["settings"].model)
        losses = asa_mod.asa_step(
            asa_setup["samples"][:3], state, np.random.default_rng(1)
        )
        assert losses["loss_dis"] != losses["loss_dis_disc_pass"]
