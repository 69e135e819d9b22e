"""Losses: generation/adaptation distance, discrimination, multi-task mix."""

from __future__ import annotations

import torch

from .errors import ShapeError


def generation_loss(z: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    """Mean over frames of the per-frame Euclidean distance between z and m.

    Zero iff z == m; invariant to any frame permutation applied to both.
    """
    if z.shape != m.shape:
        raise ShapeError(f"shape mismatch: {tuple(z.shape)} vs {tuple(m.shape)}")
    if z.ndim != 2:
        raise ShapeError("expected (T, n_mels) matrices")
    return torch.linalg.norm(z - m, dim=1).mean()


#: Eq. 8 uses the same metric between the dysarthric reconstruction and target.
adaptation_loss = generation_loss


def discrimination_loss(f_sv: torch.Tensor, f_asa: torch.Tensor) -> torch.Tensor:
    """log(1 - f_d(z_sv)) + log f_d(z_asa), averaged over the batch.

    Minimizing over the discriminator drives f_d(z_sv) -> 1 and
    f_d(z_asa) -> 0. Inputs are probabilities already clamped away from
    {0, 1}, so both logs stay finite.
    """
    f_sv = torch.atleast_1d(f_sv)
    f_asa = torch.atleast_1d(f_asa)
    if f_sv.shape != f_asa.shape:
        raise ShapeError("batch size mismatch between the two probability sets")
    return (torch.log(1.0 - f_sv) + torch.log(f_asa)).mean()


def discrimination_loss_logits(
    logit_sv: torch.Tensor, logit_asa: torch.Tensor
) -> torch.Tensor:
    """Same quantity computed from discriminator logits.

    log(1 - sigmoid(x)) = logsigmoid(-x) and log sigmoid(x) = logsigmoid(x),
    so this equals discrimination_loss on the unclamped probabilities while
    keeping gradients alive when the discriminator saturates (the clamped
    probability surface has zero gradient there).
    """
    logit_sv = torch.atleast_1d(logit_sv)
    logit_asa = torch.atleast_1d(logit_asa)
    if logit_sv.shape != logit_asa.shape:
        raise ShapeError("batch size mismatch between the two logit sets")
    return (
        torch.nn.functional.logsigmoid(-logit_sv)
        + torch.nn.functional.logsigmoid(logit_asa)
    ).mean()


def mtl_loss(l_adapt: torch.Tensor, l_dis: torch.Tensor, lam: float = 1.0):
    """Multi-task objective for the adapted speaker encoder: L_adapt - lam * L_dis."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    return l_adapt - lam * l_dis
