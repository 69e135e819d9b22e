"""Phoneme inventory shared by the toy corpus, the models and the evaluators.

The inventory is an ordered symbol table. By convention the silence symbol
comes first and the end-of-sequence marker last; both are full members of the
inventory, so posterior rows are distributions over all of them. Default size
is 12 (10 phonemes + silence + end-of-sequence).
"""

from __future__ import annotations

from dataclasses import dataclass, field

SILENCE = "sil"
EOS = "<eos>"

#: 5 vowels, 2 nasals, 3 fricatives. Vowels and nasals are voiced.
DEFAULT_PHONEMES = ("aa", "ee", "ii", "oh", "uu", "mm", "nn", "ss", "sh", "ff")


@dataclass(frozen=True)
class PhonemeInventory:
    symbols: tuple[str, ...] = field(
        default=(SILENCE, *DEFAULT_PHONEMES, EOS)
    )

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("duplicate phoneme symbols")
        if SILENCE not in self.symbols or EOS not in self.symbols:
            raise ValueError(f"inventory must contain {SILENCE!r} and {EOS!r}")

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def sil_id(self) -> int:
        return self.symbols.index(SILENCE)

    @property
    def eos_id(self) -> int:
        return self.symbols.index(EOS)

    def index(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise KeyError(f"unknown phoneme symbol: {symbol!r}") from None

    def to_ids(self, symbols) -> list[int]:
        return [self.index(s) for s in symbols]

    def to_symbols(self, ids) -> list[str]:
        return [self.symbols[i] for i in ids]

    def strip_silence(self, symbols) -> list[str]:
        return [s for s in symbols if s != SILENCE]

    @classmethod
    def toy(cls, n_phonemes: int = 10) -> "PhonemeInventory":
        """Inventory with the first ``n_phonemes`` toy phonemes plus sil/eos."""
        if not 1 <= n_phonemes <= len(DEFAULT_PHONEMES):
            raise ValueError(
                f"n_phonemes must be in [1, {len(DEFAULT_PHONEMES)}]"
            )
        return cls((SILENCE, *DEFAULT_PHONEMES[:n_phonemes], EOS))
