"""Seq2seq speech encoder: strided convs, biGRU, attention decoder.

Emits one posterior row (a distribution over the phoneme inventory, including
silence and end-of-sequence) per decoded phoneme. Teacher forcing is used for
training and for building aligned posterior rows; greedy decoding is the
inference path.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from ..errors import DecodeRunawayError, EmptyInputError, ShapeError


class SpeechEncoder(nn.Module):
    def __init__(
        self,
        n_phonemes: int,
        input_dim: int = 120,
        width: int = 128,
        enc_layers: int = 2,
        att_dim: int = 64,
        loc_channels: int = 8,
        loc_kernel: int = 15,
        sym_emb_dim: int = 32,
    ):
        super().__init__()
        self.hparams = {
            "n_phonemes": n_phonemes,
            "input_dim": input_dim,
            "width": width,
            "enc_layers": enc_layers,
            "att_dim": att_dim,
            "loc_channels": loc_channels,
            "loc_kernel": loc_kernel,
            "sym_emb_dim": sym_emb_dim,
        }
        self.n_phonemes = n_phonemes
        self.input_dim = input_dim
        self.width = width
        self.downsample = 4  # two stride-2 convs

        self.conv1 = nn.Conv1d(input_dim, width, kernel_size=5, stride=2, padding=2)
        self.conv2 = nn.Conv1d(width, width, kernel_size=5, stride=2, padding=2)
        self.gru = nn.GRU(
            width,
            width // 2,
            num_layers=enc_layers,
            bidirectional=True,
            batch_first=True,
        )

        self.q_proj = nn.Linear(width, att_dim)
        self.m_proj = nn.Linear(width, att_dim, bias=False)
        self.loc_conv = nn.Conv1d(
            1, loc_channels, kernel_size=loc_kernel, padding=loc_kernel // 2,
            bias=False,
        )
        self.loc_proj = nn.Linear(loc_channels, att_dim, bias=False)
        self.score_v = nn.Linear(att_dim, 1, bias=False)

        self.sym_emb = nn.Embedding(n_phonemes, sym_emb_dim)
        self.bos = nn.Parameter(torch.zeros(sym_emb_dim, dtype=torch.float64))
        self.cell = nn.GRUCell(sym_emb_dim + width, width)
        self.out = nn.Linear(2 * width, n_phonemes)
        self.to(torch.float64)

    # -- encoder ----------------------------------------------------------

    @staticmethod
    def _conv_out_len(length: torch.Tensor) -> torch.Tensor:
        return (length - 1) // 2 + 1

    def encode(self, feats: torch.Tensor, lengths: torch.Tensor):
        """(B, T, input_dim) padded features -> (memory, memory_lengths)."""
        if feats.ndim != 3 or feats.shape[2] != self.input_dim:
            raise ShapeError(
                f"expected (B, T, {self.input_dim}), got {tuple(feats.shape)}"
            )
        if feats.shape[1] == 0 or int(lengths.min()) <= 0:
            raise EmptyInputError("zero-length input to the speech encoder")
        x = feats.transpose(1, 2)
        x = torch.relu(self.conv1(x))
        x = torch.relu(self.conv2(x))
        x = x.transpose(1, 2)
        mem_lengths = self._conv_out_len(self._conv_out_len(lengths))
        packed = pack_padded_sequence(
            x, mem_lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        memory, _ = pad_packed_sequence(
            self.gru(packed)[0], batch_first=True, total_length=x.shape[1]
        )
        return memory, mem_lengths

    # -- attention --------------------------------------------------------

    def _attend(self, query, memory, mem_proj, attn_cum, mask):
        loc = self.loc_conv(attn_cum.unsqueeze(1)).transpose(1, 2)
        scores = self.score_v(
            torch.tanh(self.q_proj(query).unsqueeze(1) + mem_proj + self.loc_proj(loc))
        ).squeeze(2)
        scores = scores.masked_fill(~mask, float("-inf"))
        attn = torch.softmax(scores, dim=1)
        context = torch.bmm(attn.unsqueeze(1), memory).squeeze(1)
        return context, attn

    def _mask(self, memory, mem_lengths):
        steps = torch.arange(memory.shape[1])
        return steps.unsqueeze(0) < mem_lengths.unsqueeze(1)

    # -- teacher forcing ---------------------------------------------------

    def teacher_logits(
        self,
        feats: torch.Tensor,
        lengths: torch.Tensor,
        labels: torch.Tensor,
        label_lengths: torch.Tensor,
    ) -> torch.Tensor:
        """Teacher-forced output logits: (B, L_max + 1, n_phonemes).

        Step t consumes the gold symbol t-1 (BOS at t = 0); the extra final
        step is where the end-of-sequence target lives. Rows beyond a
        sequence's length are meaningless and must be masked by the caller.
        """
        memory, mem_lengths = self.encode(feats, lengths)
        batch, mem_t, _ = memory.shape
        mask = self._mask(memory, mem_lengths)
        mem_proj = self.m_proj(memory)
        hidden = memory.new_zeros(batch, self.width)
        attn_cum = memory.new_zeros(batch, mem_t)
        max_steps = int(label_lengths.max()) + 1
        logits = []
        for t in range(max_steps):
            if t == 0:
                prev = self.bos.unsqueeze(0).expand(batch, -1)
            else:
                safe_prev = labels[:, t - 1].clamp(min=0)
                prev = self.sym_emb(safe_prev)
            context, attn = self._attend(hidden, memory, mem_proj, attn_cum, mask)
            attn_cum = attn_cum + attn
            hidden = self.cell(torch.cat([prev, context], dim=1), hidden)
            logits.append(self.out(torch.cat([hidden, context], dim=1)))
        return torch.stack(logits, dim=1)

    def posteriors(
        self,
        feats: torch.Tensor,
        lengths: torch.Tensor,
        labels: torch.Tensor,
        label_lengths: torch.Tensor,
    ) -> torch.Tensor:
        """Teacher-forced posterior rows (softmax of teacher_logits)."""
        return torch.softmax(
            self.teacher_logits(feats, lengths, labels, label_lengths), dim=2
        )

    def aligned_rows(self, feat: torch.Tensor, label_ids: list[int]) -> torch.Tensor:
        """Posterior rows for one utterance, one row per gold label."""
        if not label_ids:
            raise EmptyInputError("empty label sequence")
        feats = feat.unsqueeze(0)
        lengths = torch.tensor([feat.shape[0]])
        labels = torch.tensor([label_ids], dtype=torch.long)
        label_lengths = torch.tensor([len(label_ids)])
        rows = self.posteriors(feats, lengths, labels, label_lengths)
        return rows[0, : len(label_ids)]

    # -- greedy decoding ---------------------------------------------------

    def decode_greedy(self, feat: torch.Tensor, eos_id: int, max_len_factor: int = 3):
        """Greedy decode one utterance: returns (symbol ids, posterior rows).

        The end-of-sequence symbol terminates decoding and is excluded from
        the outputs. Exceeding 3x the downsampled input length raises
        DecodeRunawayError.
        """
        if feat.ndim != 2 or feat.shape[0] == 0:
            raise EmptyInputError("zero-length input to the speech encoder")
        memory, mem_lengths = self.encode(
            feat.unsqueeze(0), torch.tensor([feat.shape[0]])
        )
        max_len = max(1, max_len_factor * feat.shape[0] // self.downsample)
        mask = self._mask(memory, mem_lengths)
        mem_proj = self.m_proj(memory)
        hidden = memory.new_zeros(1, self.width)
        attn_cum = memory.new_zeros(1, memory.shape[1])
        prev = self.bos.unsqueeze(0)
        ids: list[int] = []
        rows = []
        for _ in range(max_len):
            context, attn = self._attend(hidden, memory, mem_proj, attn_cum, mask)
            attn_cum = attn_cum + attn
            hidden = self.cell(torch.cat([prev, context], dim=1), hidden)
            row = torch.softmax(self.out(torch.cat([hidden, context], dim=1)), dim=1)
            symbol = int(row.argmax(dim=1))
            if symbol == eos_id:
                return ids, (
                    torch.stack(rows, dim=0)
                    if rows
                    else feat.new_zeros(0, self.n_phonemes)
                )
            ids.append(symbol)
            rows.append(row[0])
            prev = self.sym_emb(row.new_tensor([symbol], dtype=torch.long).long())
        raise DecodeRunawayError(
            f"decode runaway: no end-of-sequence within {max_len} steps"
        )
