"""Skip-instructions: an LSTM sentence encoder trained to predict the next instruction.

Each recipe's instruction list is framed by a start-of-recipe and an
end-of-recipe pseudo-instruction. For every consecutive pair the encoder
reads instruction t; a decoder LSTM, initialised with that encoding and fed
it again at every step, predicts the tokens of instruction t+1 with teacher
forcing. After training only the encoder is used.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from recipe_embed.errors import EmptyInputError
from recipe_embed.nn import Adam, LSTMCell, Param, concat, linear, no_grad, run_lstm, softmax_cross_entropy
from recipe_embed.nn.checkpoint import load_into, read_checkpoint, save_checkpoint
from recipe_embed.nn.layers import length_mask
from recipe_embed.nn.tensor import embedding, stack
from recipe_embed.text.vocab import BOS_ID, EOR, EOS_ID, PAD_ID, SOR, Vocabulary, tokenize


def framed_instructions(instructions):
    """Token lists with the start/end pseudo-instructions; drops empty ones.

    Returns ``(token_lists, n_skipped)``.
    """
    toks = [tokenize(s) if isinstance(s, str) else list(s) for s in instructions]
    kept = [t for t in toks if t]
    return [[SOR]] + kept + [[EOR]], len(toks) - len(kept)


def instruction_pairs(recipes_instructions, previous=False):
    """(source, target) token-list pairs over consecutive framed instructions.

    With ``previous`` the reversed pairs (t+1 -> t) are returned as well.
    Returns ``(pairs, reverse_pairs, n_skipped)``.
    """
    pairs, back, skipped = [], [], 0
    for instructions in recipes_instructions:
        framed, n = framed_instructions(instructions)
        skipped += n
        for a, b in zip(framed, framed[1:]):
            pairs.append((a, b))
            if previous:
                back.append((b, a))
    return pairs, back, skipped


class SkipInstructions:
    """Encoder, next-instruction decoder and optional previous-instruction decoder."""

    def __init__(self, vocab, d_s=64, d_tok=32, predict_previous=False, seed=0):
        rng = np.random.default_rng(seed)
        self.vocab = vocab
        self.d_s, self.d_tok, self.seed = d_s, d_tok, seed
        self.predict_previous = predict_previous
        V = len(vocab)
        self.E = Param(rng.normal(scale=0.1, size=(V, d_tok)), name="skip.E")
        self.encoder = LSTMCell(d_tok, d_s, rng, name="skip.enc")
        self.decoders = {"next": self._decoder(rng, "next")}
        if predict_previous:
            self.decoders["prev"] = self._decoder(rng, "prev")

    def _decoder(self, rng, tag):
        V = len(self.vocab)
        cell = LSTMCell(self.d_tok + self.d_s, self.d_s, rng, name=f"skip.dec_{tag}")
        W = Param(rng.normal(scale=0.1, size=(V, self.d_s)), name=f"skip.out_{tag}.W")
        b = Param(np.zeros(V), name=f"skip.out_{tag}.b")
        return cell, W, b

    def params(self):
        out = {self.E.name: self.E}
        out.update(self.encoder.params())
        for cell, W, b in self.decoders.values():
            out.update(cell.params())
            out[W.name], out[b.name] = W, b
        return out

    def _ids(self, token_lists, prefix=(), suffix=()):
        seqs = [list(prefix) + self.vocab.encode_seq(t) + list(suffix) for t in token_lists]
        lengths = np.array([len(s) for s in seqs])
        ids = np.full((len(seqs), int(lengths.max())), PAD_ID)
        for i, s in enumerate(seqs):
            ids[i, :len(s)] = s
        return ids, lengths

    def encode_batch(self, token_lists):
        if any(len(t) == 0 for t in token_lists):
            raise EmptyInputError("cannot encode an empty instruction")
        ids, lengths = self._ids(token_lists)
        return run_lstm(self.encoder, embedding(self.E, ids), lengths)

    def decoder_logits(self, enc, targets, which="next"):
        """Teacher-forced logits (B, T, V) for target token lists.

        Step t sees the encoding and the gold tokens before t only.
        """
        cell, W, b = self.decoders[which]
        inp, lengths = self._ids(targets, prefix=(BOS_ID,))
        B, T = inp.shape
        x = embedding(self.E, inp)
        ctx = stack([enc] * T, axis=1)
        hs, _ = run_lstm(cell, concat([x, ctx], axis=2), lengths, return_all=True, h0=enc)
        logits = linear(hs.reshape(B * T, self.d_s), W, b)
        return logits.reshape(B, T, -1), lengths

    def pair_loss(self, sources, targets, which="next"):
        enc = self.encode_batch(sources)
        logits, lengths = self.decoder_logits(enc, targets, which)
        gold, _ = self._ids(targets, suffix=(EOS_ID,))
        B, T, V = logits.shape
        mask = length_mask(lengths, T).ravel()
        return softmax_cross_entropy(logits.reshape(B * T, V), gold.ravel(), weights=mask)

    def next_token_accuracy(self, pairs):
        hit = total = 0
        with no_grad():
            for src, tgt in pairs:
                logits, _ = self.decoder_logits(self.encode_batch([src]), [tgt])
                gold = self.vocab.encode_seq(tgt) + [EOS_ID]
                pred = logits.data[0].argmax(axis=1)
                hit += int(np.sum(pred == np.array(gold)))
                total += len(gold)
        return hit / total

    def save(self, path):
        save_checkpoint(path, self.params(), meta={
            "vocab": self.vocab.itos, "d_s": self.d_s, "d_tok": self.d_tok,
            "predict_previous": self.predict_previous, "seed": self.seed})

    @classmethod
    def load(cls, path):
        arrays, meta = read_checkpoint(path)
        model = cls(Vocabulary(meta["vocab"][6:]), meta["d_s"], meta["d_tok"], meta["predict_previous"], meta["seed"])
        load_into(model.params(), arrays)
        return model


@dataclass
class SkipReport:
    history: list = field(default_factory=list)
    n_pairs: int = 0
    skipped: int = 0


def train_skip_instructions(recipes_instructions, d_s=64, epochs=5, d_tok=32, lr=0.01, batch_size=32, seed=0,
                            vocab=None, predict_previous=False, min_count=1):
    """Fit a :class:`SkipInstructions` model; returns ``(model, SkipReport)``.

    ``recipes_instructions`` is one list of instruction strings (or token
    lists) per recipe. ``history`` holds the mean token cross-entropy per epoch.
    """
    pairs, back, skipped = instruction_pairs(recipes_instructions, predict_previous)
    if vocab is None:
        vocab = Vocabulary.build([t for p in pairs for t in p], min_count)
    model = SkipInstructions(vocab, d_s, d_tok, predict_previous, seed)
    report = SkipReport(n_pairs=len(pairs), skipped=skipped)
    if not pairs:
        return model, report
    rng = np.random.default_rng(seed)
    opt = Adam(list(model.params().values()), lr=lr)
    for _ in range(epochs):
        order = rng.permutation(len(pairs))
        total = 0.0
        for start in range(0, len(pairs), batch_size):
            idx = order[start:start + batch_size]
            loss = model.pair_loss([pairs[i][0] for i in idx], [pairs[i][1] for i in idx])
            if predict_previous:
                loss = loss + model.pair_loss([back[i][0] for i in idx], [back[i][1] for i in idx], "prev")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
        report.history.append(total / len(pairs))
    return model, report


def encode_instruction(model, tokens):
    """Fixed-length (d_s,) encoding of one instruction; unknown tokens map to the unknown id."""
    if isinstance(tokens, str):
        tokens = tokenize(tokens)
    if len(tokens) == 0:
        raise EmptyInputError("cannot encode an empty instruction")
    with no_grad():
        return model.encode_batch([list(tokens)]).data[0].copy()


def encode_instructions(model, instructions):
    """(n, d_s) matrix for a recipe's instructions; empty ones are skipped."""
    toks = [t for t in (tokenize(s) if isinstance(s, str) else list(s) for s in instructions) if t]
    if not toks:
        raise EmptyInputError("recipe has no non-empty instruction")
    with no_grad():
        return model.encode_batch(toks).data.copy()
