"""Central-difference gradient checking against autograd, float64, h = 1e-5.

Shared by the unit tests and the acceptance suite. Each check builds a
reduced-size model, compares analytic gradients of a loss against central
differences on a seeded sample of coordinates per parameter tensor, and
reports the worst relative error.
"""

import numpy as np
import torch

from dsr.losses import (
    adaptation_loss,
    discrimination_loss,
    discrimination_loss_logits,
    generation_loss,
    mtl_loss,
)
from dsr.nets import (
    Discriminator,
    DurationPredictor,
    Ge2eLoss,
    Generator,
    PitchPredictor,
    SpeakerEncoder,
    SpeechEncoder,
    grl,
    seed_init,
)
from dsr.nets.discriminator import crop_or_tile
from dsr.training import sequence_ce_loss

H = 1e-5
TOL = 1e-3
#: Below this gradient magnitude central differences only see float noise
#: (cancellation error ~1e-16 / 2H = 5e-12 per entry at loss scale 1).
ZERO_FLOOR = 1e-8
P = 5  # reduced phoneme inventory
EMB = 8  # reduced speaker embedding


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    norm_a = np.linalg.norm(analytic)
    norm_n = np.linalg.norm(numeric)
    if max(norm_a, norm_n) < ZERO_FLOOR:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / (norm_a + norm_n))


def check_gradients(loss_fn, named_params, max_entries=10, seed=0) -> dict:
    """Max relative error per parameter tensor for loss_fn's gradients."""
    params = [p for _, p in named_params]
    loss = loss_fn()
    analytic = torch.autograd.grad(loss, params)
    rng = np.random.default_rng(seed)
    errors = {}
    for (name, param), grad in zip(named_params, analytic):
        n = param.numel()
        entries = rng.choice(n, size=min(max_entries, n), replace=False)
        flat = param.data.view(-1)
        numeric = np.zeros(len(entries))
        for i, idx in enumerate(entries):
            original = float(flat[idx])
            with torch.no_grad():
                flat[idx] = original + H
                plus = float(loss_fn())
                flat[idx] = original - H
                minus = float(loss_fn())
                flat[idx] = original
            numeric[i] = (plus - minus) / (2.0 * H)
        analytic_sample = grad.detach().reshape(-1)[entries].numpy()
        errors[name] = relative_error(analytic_sample, numeric)
    return errors


def _named(module, prefix):
    return [(f"{prefix}.{n}", p) for n, p in module.named_parameters()]


# --------------------------------------------------------------------------
# Reduced-size model builders (deterministic)
# --------------------------------------------------------------------------


def build_speech_encoder_case():
    torch.manual_seed(0)
    net = SpeechEncoder(n_phonemes=P, width=8, att_dim=4, loc_channels=2,
                        loc_kernel=5, sym_emb_dim=4)
    seed_init(net, 1)
    feats = [
        torch.randn(12, 120, dtype=torch.float64),
        torch.randn(9, 120, dtype=torch.float64),
    ]
    labels = [[0, 3, 2], [1, 2]]

    def loss_fn():
        return sequence_ce_loss(net, feats, labels, eos_id=P - 1)

    return loss_fn, _named(net, "speech_encoder")


def build_duration_case():
    torch.manual_seed(0)
    net = DurationPredictor(P, width=4)
    seed_init(net, 2)
    rows = torch.softmax(torch.randn(6, P, dtype=torch.float64), dim=1)
    target = torch.log(torch.tensor([3.0, 5, 2, 8, 4, 6], dtype=torch.float64))

    def loss_fn():
        return torch.nn.functional.mse_loss(net(rows), target)

    return loss_fn, _named(net, "duration_predictor")


def build_pitch_case():
    torch.manual_seed(0)
    net = PitchPredictor(P, width=4)
    seed_init(net, 3)
    rows = torch.softmax(torch.randn(11, P, dtype=torch.float64), dim=1)
    target = torch.randn(11, dtype=torch.float64)

    def loss_fn():
        return torch.nn.functional.mse_loss(net(rows), target)

    return loss_fn, _named(net, "pitch_predictor")


def build_ge2e_case():
    torch.manual_seed(0)
    net = SpeakerEncoder(n_mels=40, hidden=4, layers=2, embedding_dim=EMB)
    seed_init(net, 4)
    ge2e = Ge2eLoss(init_w=2.0, init_b=-1.0)
    mels = torch.randn(4, 6, 40, dtype=torch.float64)

    def loss_fn():
        embeddings = net(mels).view(2, 2, EMB)
        return ge2e(embeddings)

    return loss_fn, _named(net, "speaker_encoder") + _named(ge2e, "ge2e")


def build_generator_case():
    torch.manual_seed(0)
    net = Generator(n_phonemes=P, embedding_dim=EMB, width=8)
    seed_init(net, 5)
    p = torch.softmax(torch.randn(7, P, dtype=torch.float64), dim=1)
    v = torch.randn(7, dtype=torch.float64)
    e = torch.randn(EMB, dtype=torch.float64)
    e = e / e.norm()
    m = torch.randn(7, 80, dtype=torch.float64)

    def loss_fn():
        return generation_loss(net(p, v, e), m)

    return loss_fn, _named(net, "generator")


def build_discriminator_case():
    torch.manual_seed(0)
    net = Discriminator(n_mels=80, crop_len=8, channels=2)
    seed_init(net, 6)
    z_sv = torch.randn(8, 80, dtype=torch.float64)
    z_asa = torch.randn(8, 80, dtype=torch.float64)

    def loss_fn():
        return discrimination_loss(net(z_sv), net(z_asa))

    return loss_fn, _named(net, "discriminator")


class MtlCase:
    """L_MTL through speaker encoder, frozen generator, discriminator, crops."""

    def __init__(self, mode: str):
        torch.manual_seed(0)
        self.mode = mode
        self.spk = SpeakerEncoder(n_mels=40, hidden=4, layers=2, embedding_dim=EMB)
        seed_init(self.spk, 7)
        self.gen = Generator(n_phonemes=P, embedding_dim=EMB, width=8)
        seed_init(self.gen, 8)
        self.disc = Discriminator(n_mels=80, crop_len=8, channels=2)
        seed_init(self.disc, 9)
        for module in (self.gen, self.disc):
            for param in module.parameters():
                param.requires_grad_(False)
        g = torch.Generator().manual_seed(11)
        self.m40 = torch.randn(10, 40, generator=g, dtype=torch.float64)
        self.m80 = torch.randn(9, 80, generator=g, dtype=torch.float64)
        self.p = torch.softmax(
            torch.randn(9, P, generator=g, dtype=torch.float64), dim=1
        )
        self.v = torch.randn(9, generator=g, dtype=torch.float64)
        self.p_tilde = torch.softmax(
            torch.randn(11, P, generator=g, dtype=torch.float64), dim=1
        )
        self.v_tilde = torch.randn(11, generator=g, dtype=torch.float64)
        with torch.no_grad():
            e_sv = torch.randn(EMB, generator=g, dtype=torch.float64)
            e_sv = e_sv / e_sv.norm()
            self.z_sv = self.gen(self.p_tilde, self.v_tilde, e_sv)
        self.lam = 1.0

    def loss(self):
        # Mirrors the ASA speaker-encoder pass exactly (logit-based terms).
        e_asa = self.spk.embed(self.m40)
        z_asa = self.gen(self.p, self.v, e_asa)
        z_asa_tilde = self.gen(self.p_tilde, self.v_tilde, e_asa)
        l_adapt = adaptation_loss(z_asa, self.m80)
        crop_asa = crop_or_tile(z_asa_tilde, 8, 2)
        crop_sv = crop_or_tile(self.z_sv, 8, 2)
        with torch.no_grad():
            logit_sv = self.disc.logit(crop_sv)
        if self.mode == "two_pass":
            logit_asa = self.disc.logit(crop_asa)
            return mtl_loss(
                l_adapt, discrimination_loss_logits(logit_sv, logit_asa), self.lam
            )
        logit_asa = self.disc.logit(grl(crop_asa, scale=self.lam))
        return l_adapt + discrimination_loss_logits(logit_sv, logit_asa)


def build_mtl_case(mode: str):
    case = MtlCase(mode)
    return case.loss, _named(case.spk, "speaker_encoder_asa")


ALL_CASES = {
    "speech_encoder_ce": build_speech_encoder_case,
    "duration_mse": build_duration_case,
    "pitch_mse": build_pitch_case,
    "ge2e": build_ge2e_case,
    "generation_loss": build_generator_case,
    "discrimination_loss": build_discriminator_case,
    "mtl_two_pass": lambda: build_mtl_case("two_pass"),
    "mtl_grl": lambda: build_mtl_case("grl"),
}


def run_all_checks() -> dict:
    """Worst relative error per case; values must stay below TOL."""
    results = {}
    for name, builder in ALL_CASES.items():
        loss_fn, named_params = builder()
        errors = check_gradients(loss_fn, named_params)
        results[name] = max(errors.values())
    return results
