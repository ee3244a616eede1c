"""Ingredient-name extraction from ingredient sentences.

A bidirectional LSTM scores every token with a logistic output; the longest
contiguous run of positive tokens becomes one underscore-joined ingredient
token ("2 tbsp of olive oil" -> "olive_oil"). Without training data a rule
extractor drops quantities, units and filler words instead.
"""

from __future__ import annotations

import numpy as np

from recipe_embed.nn import Adam, LSTMCell, Param, linear, no_grad, run_bilstm_all
from recipe_embed.nn.checkpoint import load_into, read_checkpoint, save_checkpoint
from recipe_embed.nn.tensor import binary_cross_entropy_with_logits, embedding
from recipe_embed.nutrition import NON_MEASURABLE, normalize_unit
from recipe_embed.text.vocab import PAD_ID, UNK, Vocabulary, tokenize

UNKNOWN_INGREDIENT = UNK

STOPWORDS = frozenset("""
a an and or of the to for with into in on at as plus about approximately
fresh freshly chopped diced minced sliced grated shredded ground crushed peeled cubed halved
finely roughly thinly coarsely large small medium whole dried frozen softened melted beaten
cooked uncooked boneless skinless optional taste divided packed heaping level extra more
cut pieces inch inches room temperature cold warm hot firmly lightly
""".split())

_FRACTION_WORDS = frozenset("half quarter third dozen few some several".split())


def _is_quantity(tok):
    return tok.isdigit() or tok in _FRACTION_WORDS


def rule_extract(tokens):
    """Drop quantities, units, container words and filler; join what is left."""
    keep = []
    for tok in tokens:
        if _is_quantity(tok) or tok in STOPWORDS or normalize_unit(tok) is not None:
            continue
        if tok in NON_MEASURABLE or tok.rstrip("s") in NON_MEASURABLE or tok in ("fl", "oz"):
            continue
        keep.append(tok)
    return "_".join(keep) if keep else UNKNOWN_INGREDIENT


def longest_positive_run(tokens, positive):
    best, run = (0, 0), None
    for k, pos in enumerate(list(positive) + [False]):
        if pos and run is None:
            run = k
        elif not pos and run is not None:
            if k - run > best[1] - best[0]:
                best = (run, k)
            run = None
    if best[1] == best[0]:
        return UNKNOWN_INGREDIENT
    return "_".join(tokens[best[0]:best[1]])


class IngredientExtractor:
    """Per-token ingredient tagger: embeddings -> bi-LSTM -> logistic output."""

    def __init__(self, vocab, d_emb=32, hidden=32, seed=0):
        rng = np.random.default_rng(seed)
        self.vocab = vocab
        self.d_emb, self.hidden, self.seed = d_emb, hidden, seed
        self.E = Param(rng.normal(scale=0.1, size=(len(vocab), d_emb)), name="extract.E")
        self.fwd = LSTMCell(d_emb, hidden, rng, name="extract.fwd")
        self.bwd = LSTMCell(d_emb, hidden, rng, name="extract.bwd")
        self.W = Param(rng.normal(scale=0.1, size=(1, 2 * hidden)), name="extract.W")
        self.b = Param(np.zeros(1), name="extract.b")

    def params(self):
        out = {self.E.name: self.E, self.W.name: self.W, self.b.name: self.b}
        out.update(self.fwd.params())
        out.update(self.bwd.params())
        return out

    def _batch(self, token_lists):
        lengths = np.array([len(t) for t in token_lists])
        ids = np.full((len(token_lists), int(lengths.max())), PAD_ID)
        for i, toks in enumerate(token_lists):
            ids[i, :len(toks)] = self.vocab.encode_seq(toks)
        return ids, lengths

    def logits(self, token_lists):
        ids, lengths = self._batch(token_lists)
        B, T = ids.shape
        hs = run_bilstm_all(self.fwd, self.bwd, embedding(self.E, ids), lengths)
        out = linear(hs.reshape(B * T, 2 * self.hidden), self.W, self.b)
        return out.reshape(B, T), lengths

    def fit(self, token_lists, labels, epochs=30, lr=0.01, batch_size=32, seed=None):
        rng = np.random.default_rng(self.seed if seed is None else seed)
        opt = Adam(list(self.params().values()), lr=lr)
        history = []
        n = len(token_lists)
        for _ in range(epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, batch_size):
                idx = order[start:start + batch_size]
                toks = [token_lists[i] for i in idx]
                logits, lengths = self.logits(toks)
                target = np.zeros(logits.shape)
                for row, i in enumerate(idx):
                    target[row, :len(labels[i])] = labels[i]
                mask = (np.arange(logits.shape[1])[None, :] < lengths[:, None]).astype(float)
                loss = binary_cross_entropy_with_logits(logits, target, mask)
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += float(loss.data) * len(idx)
            history.append(total / n)
        return history

    def scores(self, tokens):
        if not tokens:
            return np.zeros(0)
        with no_grad():
            logits, _ = self.logits([tokens])
        return 1.0 / (1.0 + np.exp(-logits.data[0]))

    def extract(self, tokens):
        return longest_positive_run(tokens, self.scores(tokens) > 0.5)

    def token_accuracy(self, token_lists, labels):
        hit = total = 0
        for toks, lab in zip(token_lists, labels):
            pred = self.scores(toks) > 0.5
            hit += int(np.sum(pred == np.asarray(lab, dtype=bool)))
            total += len(toks)
        return hit / total

    def save(self, path):
        save_checkpoint(path, self.params(), meta={"vocab": self.vocab.itos, "d_emb": self.d_emb,
                                                   "hidden": self.hidden, "seed": self.seed})

    @classmethod
    def load(cls, path):
        arrays, meta = read_checkpoint(path)
        vocab = Vocabulary(meta["vocab"][6:])
        model = cls(vocab, meta["d_emb"], meta["hidden"], meta["seed"])
        load_into(model.params(), arrays)
        return model


def extract_ingredient_name(tokens, extractor=None):
    """Ingredient token for a tokenized sentence, via ``extractor`` or the rule fallback."""
    if isinstance(tokens, str):
        tokens = tokenize(tokens)
    if extractor is None:
        return rule_extract(tokens)
    return extractor.extract(tokens)
