"""Character set handling.

An Alphabet is an ordered set of recognizable characters.  The recognizer's
output classes form the extended alphabet: class 0 is always the blank, and
class i+1 is the i-th character.
"""

from __future__ import annotations

from .errors import ConfigError

BLANK = 0


class Alphabet:
    def __init__(self, chars: str):
        if len(set(chars)) != len(chars):
            raise ConfigError(f"alphabet has repeated characters: {chars!r}")
        if len(chars) == 0:
            raise ConfigError("alphabet is empty")
        self.chars = chars
        self._to_index = {c: i + 1 for i, c in enumerate(chars)}

    @property
    def num_classes(self) -> int:
        """Size of the extended alphabet (characters plus blank)."""
        return len(self.chars) + 1

    def __len__(self):
        return len(self.chars)

    def __contains__(self, ch: str) -> bool:
        return ch in self._to_index

    def __eq__(self, other):
        return isinstance(other, Alphabet) and self.chars == other.chars

    def encode(self, text: str) -> list:
        """Map text to label indices (1-based; blank never appears)."""
        try:
            return [self._to_index[c] for c in text]
        except KeyError as e:
            raise ConfigError(f"character {e.args[0]!r} not in alphabet") from None

    def decode(self, labels) -> str:
        out = []
        for idx in labels:
            if not 1 <= idx <= len(self.chars):
                raise ConfigError(f"label index {idx} out of range")
            out.append(self.chars[idx - 1])
        return "".join(out)
