"""Tokenization and vocabularies."""

from __future__ import annotations

import re
from collections import Counter
from pathlib import Path

from recipe_embed.errors import ParseError

PAD, UNK, SOR, EOR, BOS, EOS = "<pad>", "<unk>", "<sor>", "<eor>", "<s>", "</s>"
SPECIALS = (PAD, UNK, SOR, EOR, BOS, EOS)
PAD_ID, UNK_ID, SOR_ID, EOR_ID, BOS_ID, EOS_ID = range(len(SPECIALS))

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text):
    """Lowercase, split on anything that is not a letter or digit."""
    return _TOKEN.findall(text.lower())


class Vocabulary:
    """Token <-> id map with fixed special ids 0..5.

    Regular tokens are ordered by descending count, then alphabetically, so
    a vocabulary built from the same data is always identical.
    """

    def __init__(self, tokens=()):
        self.itos = list(SPECIALS)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, token):
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    @classmethod
    def build(cls, token_lists, min_count=1):
        counts = Counter(t for toks in token_lists for t in toks if t not in SPECIALS)
        ordered = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        return cls(ordered)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    @property
    def n_regular(self):
        return len(self.itos) - len(SPECIALS)

    def encode(self, token):
        return self.stoi.get(token, UNK_ID)

    def decode(self, idx):
        return self.itos[idx]

    def encode_seq(self, tokens):
        return [self.encode(t) for t in tokens]

    def save(self, path):
        Path(path).write_text("".join(f"{t}\t{i}\n" for i, t in enumerate(self.itos)))

    @classmethod
    def load(cls, path):
        v = cls()
        lines = [ln for ln in Path(path).read_text().splitlines() if ln]
        for lineno, line in enumerate(lines, 1):
            tok, _, idx = line.rpartition("\t")
            if not tok or not idx.isdigit() or int(idx) != lineno - 1:
                raise ParseError("expected '<token>\\t<id>' with consecutive ids", f"{path}:{lineno}")
            if lineno <= len(SPECIALS):
                if tok != SPECIALS[lineno - 1]:
                    raise ParseError(f"special id {lineno - 1} must be {SPECIALS[lineno - 1]}", f"{path}:{lineno}")
                continue
            if tok in v.stoi:
                raise ParseError(f"duplicate token {tok!r}", f"{path}:{lineno}")
            v.add(tok)
        return v
