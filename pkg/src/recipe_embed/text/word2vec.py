"""Skip-gram with negative sampling over ingredient co-occurrence.

The context window of an ingredient is the whole ingredient list of its
recipe: every ordered pair of distinct positions is a positive pair.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from recipe_embed.errors import ConfigError, ParseError
from recipe_embed.text.vocab import SPECIALS, Vocabulary


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sgns_loss_and_grads(W_in, W_out, centers, contexts, negatives):
    """Summed SGNS loss and its gradients w.r.t. both matrices.

    loss = sum_i [ -log s(u_ctx . v_c) - sum_k log s(-u_neg_k . v_c) ]
    where v rows come from ``W_in`` and u rows from ``W_out``.
    ``negatives`` has shape (n_pairs, n_neg).
    """
    v = W_in[centers]
    u_pos = W_out[contexts]
    u_neg = W_out[negatives]
    s_pos = np.einsum("ij,ij->i", v, u_pos)
    s_neg = np.einsum("ikj,ij->ik", u_neg, v)
    loss = -np.sum(_log_sigmoid(s_pos)) - np.sum(_log_sigmoid(-s_neg))

    g_pos = _sigmoid(s_pos) - 1.0
    g_neg = _sigmoid(s_neg)
    dv = g_pos[:, None] * u_pos + np.einsum("ik,ikj->ij", g_neg, u_neg)
    g_in = np.zeros_like(W_in)
    g_out = np.zeros_like(W_out)
    np.add.at(g_in, centers, dv)
    np.add.at(g_out, contexts, g_pos[:, None] * v)
    np.add.at(g_out, negatives, g_neg[:, :, None] * v[:, None, :])
    return loss, g_in, g_out


def cooccurrence_pairs(token_lists, vocab):
    pairs = []
    for toks in token_lists:
        ids = [vocab.encode(t) for t in toks]
        for i, a in enumerate(ids):
            for j, b in enumerate(ids):
                if i != j:
                    pairs.append((a, b))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


class IngredientVectors:
    """|V| x d_w matrix aligned with a vocabulary (specials included)."""

    def __init__(self, matrix, vocab):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape[0] != len(vocab):
            raise ConfigError(f"{matrix.shape[0]} rows for a vocabulary of {len(vocab)}")
        self.matrix = matrix
        self.vocab = vocab

    @property
    def dim(self):
        return self.matrix.shape[1]

    def __getitem__(self, token):
        return self.matrix[self.vocab.encode(token)]

    def lookup(self, tokens):
        return self.matrix[[self.vocab.encode(t) for t in tokens]]

    def similarity(self, a, b):
        x, y = self[a], self[b]
        return float(x @ y / (np.linalg.norm(x) * np.linalg.norm(y)))

    def save(self, path):
        lines = [" ".join([tok] + [repr(float(x)) for x in row]) for tok, row in zip(self.vocab.itos, self.matrix)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        rows, tokens = [], []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            tok, *vals = line.split(" ")
            try:
                rows.append([float(x) for x in vals])
            except ValueError as exc:
                raise ParseError(f"bad float: {exc}", f"{path}:{lineno}") from exc
            if rows and len(rows[-1]) != len(rows[0]):
                raise ParseError("ragged vector row", f"{path}:{lineno}")
            tokens.append(tok)
        if tuple(tokens[:len(SPECIALS)]) != SPECIALS:
            raise ParseError("vector file must start with the special tokens", f"{path}:1")
        return cls(np.array(rows), Vocabulary(tokens[len(SPECIALS):]))


def train_word_vectors(token_lists, d_w=64, negatives=5, epochs=5, lr=0.025, batch_size=256, seed=0,
                       vocab=None, min_count=1):
    """Learn ingredient vectors; returns :class:`IngredientVectors`.

    Negatives are drawn from the unigram distribution raised to 0.75. The
    learning rate decays linearly to 1% of ``lr`` over all updates.
    """
    if d_w < 2:
        raise ConfigError("d_w must be >= 2")
    if negatives < 1:
        raise ConfigError("negatives must be >= 1")
    vocab = Vocabulary.build(token_lists, min_count) if vocab is None else vocab
    rng = np.random.default_rng(seed)
    W_in = (rng.random((len(vocab), d_w)) - 0.5) / d_w
    W_out = np.zeros((len(vocab), d_w))
    pairs = cooccurrence_pairs(token_lists, vocab)
    if len(pairs) == 0:
        return IngredientVectors(W_in, vocab)
    if vocab.n_regular < negatives + 1:
        raise ConfigError(f"vocabulary of {vocab.n_regular} tokens is too small for {negatives} negatives")

    counts = np.zeros(len(vocab))
    for toks in token_lists:
        for t in toks:
            counts[vocab.encode(t)] += 1
    noise = counts ** 0.75
    noise /= noise.sum()
    cdf = np.cumsum(noise)

    total_steps = epochs * int(np.ceil(len(pairs) / batch_size))
    step = 0
    for _ in range(epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(pairs), batch_size):
            batch = pairs[order[start:start + batch_size]]
            neg = np.searchsorted(cdf, rng.random((len(batch), negatives)) * cdf[-1], side="right")
            neg = np.minimum(neg, len(vocab) - 1)
            _, g_in, g_out = sgns_loss_and_grads(W_in, W_out, batch[:, 0], batch[:, 1], neg)
            rate = lr * max(0.01, 1.0 - step / total_steps)
            W_in -= rate * g_in
            W_out -= rate * g_out
            step += 1
    return IngredientVectors(W_in, vocab)
