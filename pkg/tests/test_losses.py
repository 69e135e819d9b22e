import math

import numpy as np
import pytest
import torch

from dsr.errors import ShapeError
from dsr.losses import adaptation_loss, discrimination_loss, generation_loss, mtl_loss
from dsr.nets.speaker import Ge2eLoss


def ge2e_oracle(embeddings: np.ndarray, w: float, b: float) -> float:
    """Brute-force GE2E: explicit loops over speakers, utterances, centroids."""
    n_spk, n_utt, _ = embeddings.shape
    total = 0.0
    for j in range(n_spk):
        for i in range(n_utt):
            e = embeddings[j, i]
            scores = []
            for k in range(n_spk):
                if k == j:
                    others = [embeddings[j, x] for x in range(n_utt) if x != i]
                    c = np.mean(others, axis=0)
                else:
                    c = embeddings[k].mean(axis=0)
                cos = float(e @ c / (np.linalg.norm(e) * np.linalg.norm(c)))
                scores.append(w * cos + b)
            scores = np.array(scores)
            log_softmax = scores - np.log(np.exp(scores).sum())
            total -= log_softmax[j]
    return total


class TestGenerationLoss:
    def test_identity_is_zero(self):
        z = torch.randn(12, 80, dtype=torch.float64)
        assert float(generation_loss(z, z)) == 0.0

    def test_hand_computed_single_frame(self):
        z = torch.zeros(1, 80, dtype=torch.float64)
        m = torch.zeros(1, 80, dtype=torch.float64)
        z[0, 0], z[0, 1] = 3.0, 4.0
        assert abs(float(generation_loss(z, m)) - 5.0) < 1e-9
        assert abs(float(adaptation_loss(z, m)) - 5.0) < 1e-9

    def test_frame_permutation_invariance(self):
        rng = torch.Generator().manual_seed(0)
        z = torch.randn(20, 80, generator=rng, dtype=torch.float64)
        m = torch.randn(20, 80, generator=rng, dtype=torch.float64)
        perm = torch.randperm(20, generator=rng)
        assert torch.isclose(
            generation_loss(z, m), generation_loss(z[perm], m[perm])
        )

    def test_nonnegative(self):
        rng = torch.Generator().manual_seed(1)
        for _ in range(20):
            z = torch.randn(6, 80, generator=rng, dtype=torch.float64)
            m = torch.randn(6, 80, generator=rng, dtype=torch.float64)
            assert float(generation_loss(z, m)) >= 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            generation_loss(
                torch.zeros(3, 80, dtype=torch.float64),
                torch.zeros(4, 80, dtype=torch.float64),
            )


class TestDiscriminationLoss:
    def test_hand_value_09_01(self):
        value = discrimination_loss(
            torch.tensor(0.9, dtype=torch.float64),
            torch.tensor(0.1, dtype=torch.float64),
        )
        assert abs(float(value) - (-4.605170185988091)) < 1e-6

    def test_hand_value_both_half(self):
        value = discrimination_loss(
            torch.tensor(0.5, dtype=torch.float64),
            torch.tensor(0.5, dtype=torch.float64),
        )
        assert abs(float(value) - (2 * math.log(0.5))) < 1e-9

    def test_swap_changes_value_unless_equal(self):
        a = torch.tensor(0.8, dtype=torch.float64)
        b = torch.tensor(0.3, dtype=torch.float64)
        assert not torch.isclose(
            discrimination_loss(a, b), discrimination_loss(b, a)
        )
        assert torch.isclose(
            discrimination_loss(a, a), discrimination_loss(a, a)
        )

    def test_batch_average(self):
        f_sv = torch.tensor([0.9, 0.5], dtype=torch.float64)
        f_asa = torch.tensor([0.1, 0.5], dtype=torch.float64)
        expected = (-4.605170185988091 + 2 * math.log(0.5)) / 2
        assert abs(float(discrimination_loss(f_sv, f_asa)) - expected) < 1e-9


class TestMtlLoss:
    def test_lambda_zero_degenerates(self):
        l_adapt = torch.tensor(1.7, dtype=torch.float64)
        assert float(mtl_loss(l_adapt, torch.tensor(-3.0), lam=0.0)) == 1.7

    def test_hand_value(self):
        value = mtl_loss(
            torch.tensor(2.0, dtype=torch.float64),
            torch.tensor(-1.38629, dtype=torch.float64),
            lam=1.0,
        )
        assert abs(float(value) - 3.38629) < 1e-6

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            mtl_loss(torch.tensor(1.0), torch.tensor(1.0), lam=-0.1)


class TestGe2e:
    def test_orthogonal_two_by_two_matches_oracle(self):
        emb = np.zeros((2, 2, 8))
        emb[0, :, 0] = 1.0  # speaker A
        emb[1, :, 1] = 1.0  # speaker B
        expected = ge2e_oracle(emb, w=1.0, b=0.0)
        # Closed form: every embedding scores 1 vs own centroid, 0 vs other.
        assert abs(expected - 4 * math.log(1 + math.exp(-1))) < 1e-12

        loss = Ge2eLoss(init_w=1.0, init_b=0.0)
        value = float(loss(torch.from_numpy(emb)))
        assert abs(value - expected) < 1e-9

    def test_random_batch_matches_oracle(self):
        rng = np.random.default_rng(0)
        emb = rng.normal(size=(3, 4, 6))
        emb /= np.linalg.norm(emb, axis=2, keepdims=True)
        expected = ge2e_oracle(emb, w=10.0, b=-5.0)
        loss = Ge2eLoss()
        assert abs(float(loss(torch.from_numpy(emb))) - expected) < 1e-8

    def test_identical_embeddings_give_nm_log_n(self):
        for n, m in [(2, 2), (3, 2), (4, 4)]:
            emb = np.tile(np.eye(1, 8), (n, m, 1))
            loss = Ge2eLoss(init_w=10.0, init_b=-5.0)
            value = float(loss(torch.from_numpy(emb)))
            assert abs(value - n * m * math.log(n)) < 1e-9

    def test_speaker_permutation_invariance(self):
        rng = np.random.default_rng(5)
        emb = rng.normal(size=(4, 3, 6))
        emb /= np.linalg.norm(emb, axis=2, keepdims=True)
        loss = Ge2eLoss()
        a = float(loss(torch.from_numpy(emb)))
        b = float(loss(torch.from_numpy(emb[[2, 0, 3, 1]])))
        assert abs(a - b) < 1e-9

    def test_too_few_speakers_or_utts(self):
        loss = Ge2eLoss()
        with pytest.raises(ShapeError):
            loss(torch.randn(1, 4, 8, dtype=torch.float64))
        with pytest.raises(ShapeError):
            loss(torch.randn(3, 1, 8, dtype=torch.float64))

    def test_loss_decreases_on_separable_toy_problem(self):
        # Two speakers, learnable embeddings: one gradient step must help.
        torch.manual_seed(0)
        raw = torch.randn(2, 2, 8, dtype=torch.float64, requires_grad=True)
        loss_mod = Ge2eLoss(init_w=1.0, init_b=0.0)
        normed = raw / raw.norm(dim=2, keepdim=True)
        before = loss_mod(normed)
        before.backward()
        with torch.no_grad():
            stepped = raw - 0.5 * raw.grad
        stepped = stepped / stepped.norm(dim=2, keepdim=True)
        after = loss_mod(stepped)
        assert float(after) < float(before)
