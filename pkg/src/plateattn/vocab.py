"""Character vocabulary for mainland-China plates.

31 province region codes, 24 letters (A-Z without I and O), 10 digits, and
the START/END/PAD specials at fixed ids 65/66/67. A plate string is the
region code followed by 6 or 7 letters/digits.
"""

from __future__ import annotations

import json
from typing import List, Sequence

REGION_CODES = list("京津冀晋蒙辽吉黑沪苏浙皖闽赣鲁豫鄂湘粤桂琼渝川贵云藏陕甘青宁新")
LETTERS = [c for c in "ABCDEFGHIJKLMNOPQRSTUVWXYZ" if c not in "IO"]
DIGITS = list("0123456789")

START, END, PAD = 65, 66, 67


class Vocabulary:
    def __init__(self, region_codes: Sequence[str] = REGION_CODES,
                 letters: Sequence[str] = LETTERS, digits: Sequence[str] = DIGITS):
        self.region_codes = list(region_codes)
        self.letters = list(letters)
        self.digits = list(digits)
        self.tokens = (
            self.region_codes + self.letters + self.digits
            + ["<START>", "<END>", "<PAD>"]
        )
        if len(self.tokens) != 68:
            raise ValueError(f"expected 68 tokens, got {len(self.tokens)}")
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def token_id(self, tok: str) -> int:
        try:
            return self._ids[tok]
        except KeyError:
            raise KeyError(f"token {tok!r} not in vocabulary") from None

    def encode(self, plate: str) -> List[int]:
        """Plate string to token ids (no specials appended)."""
        return [self.token_id(ch) for ch in plate]

    def decode(self, ids: Sequence[int]) -> str:
        """Token ids to plate string; specials are stripped."""
        out = []
        for i in ids:
            if i in (START, END, PAD):
                continue
            if not 0 <= i < len(self.tokens):
                raise ValueError(f"token id {i} out of range")
            out.append(self.tokens[i])
        return "".join(out)

    def is_valid_label(self, plate: str) -> bool:
        """Region code first, then 6 or 7 letters/digits."""
        if len(plate) not in (7, 8):
            return False
        if plate[0] not in self.region_codes:
            return False
        allowed = set(self.letters) | set(self.digits)
        return all(ch in allowed for ch in plate[1:])

    def to_json(self) -> dict:
        return {
            "region_codes": self.region_codes,
            "letters": self.letters,
            "digits": self.digits,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(obj["region_codes"], obj["letters"], obj["digits"])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, ensure_ascii=False, indent=1)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))


DEFAULT_VOCAB = Vocabulary()
