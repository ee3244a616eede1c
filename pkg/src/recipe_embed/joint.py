"""Joint recipe/image embedding with cosine-margin loss and semantic regularization.

Recipe side: a bidirectional LSTM over ingredient vectors and an LSTM over
instruction encodings, concatenated and projected by ``W_r``. Image side: a
linear projection ``W_v`` of precomputed features. One classifier ``W_c``
is shared by both branches.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from recipe_embed.errors import ConfigError, DegenerateInputError, EmptyInputError, SamplingError, TrainingDivergence
from recipe_embed.nn import (
    LSTMCell,
    Param,
    add,
    cosine_similarity,
    linear,
    make_optimizer,
    mul,
    no_grad,
    relu,
    run_bilstm,
    run_lstm,
    scale,
    softmax_cross_entropy,
)
from recipe_embed.nn.checkpoint import load_into, read_checkpoint, save_checkpoint
from recipe_embed.nn.layers import pad_sequences, uniform_init
from recipe_embed.nn.tensor import as_tensor, concat, tmean
from recipe_embed.retrieval import evaluate

log = logging.getLogger(__name__)


class JointModel:
    def __init__(self, d_word, d_instr, d_img, n_classes, d_emb=128, hidden_ingr=64, hidden_instr=64, seed=0):
        rng = np.random.default_rng(seed)
        self.dims = dict(d_word=d_word, d_instr=d_instr, d_img=d_img, n_classes=n_classes, d_emb=d_emb,
                         hidden_ingr=hidden_ingr, hidden_instr=hidden_instr, seed=seed)
        self.ingr_fwd = LSTMCell(d_word, hidden_ingr, rng, name="ingr.fwd")
        self.ingr_bwd = LSTMCell(d_word, hidden_ingr, rng, name="ingr.bwd")
        self.instr = LSTMCell(d_instr, hidden_instr, rng, name="instr")
        d_rec = 2 * hidden_ingr + hidden_instr
        self.W_r = Param(uniform_init(rng, (d_emb, d_rec), d_rec), name="W_r")
        self.b_r = Param(np.zeros(d_emb), name="b_r")
        self.W_v = Param(uniform_init(rng, (d_emb, d_img), d_img), name="W_v")
        self.b_v = Param(np.zeros(d_emb), name="b_v")
        self.W_c = Param(uniform_init(rng, (n_classes, d_emb), d_emb), name="W_c")

    @property
    def d_emb(self):
        return self.dims["d_emb"]

    def recipe_params(self):
        out = {}
        for cell in (self.ingr_fwd, self.ingr_bwd, self.instr):
            out.update(cell.params())
        out.update({"W_r": self.W_r, "b_r": self.b_r})
        return out

    def image_params(self):
        return {"W_v": self.W_v, "b_v": self.b_v}

    def params(self):
        out = self.recipe_params()
        out.update(self.image_params())
        out["W_c"] = self.W_c
        return out

    def set_stage(self, stage):
        """1: image side frozen. 2: recipe side and classifier frozen. 3: nothing frozen."""
        if stage not in (1, 2, 3):
            raise ConfigError(f"stage must be 1, 2 or 3, got {stage}")
        for p in self.recipe_params().values():
            p.frozen = stage == 2
        for p in self.image_params().values():
            p.frozen = stage == 1
        self.W_c.frozen = stage == 2

    def snapshot(self):
        return {k: p.data.copy() for k, p in self.params().items()}

    def restore(self, snap):
        for k, p in self.params().items():
            p.data[...] = snap[k]

    def save(self, path, meta=None):
        save_checkpoint(path, self.params(), meta={"dims": self.dims, **(meta or {})})

    @classmethod
    def load(cls, path):
        arrays, meta = read_checkpoint(path)
        model = cls(**meta["dims"])
        load_into(model.params(), arrays)
        return model, meta


def embed_recipes(model, ingr, ingr_len, instr, instr_len):
    """Batch recipe embeddings (B, d_emb) from right-padded vector sequences."""
    h_g = run_bilstm(model.ingr_fwd, model.ingr_bwd, ingr, ingr_len)
    h_s = run_lstm(model.instr, instr, instr_len)
    return linear(concat([h_g, h_s], axis=1), model.W_r, model.b_r)


def embed_recipe(model, ingredient_vectors, instruction_vectors):
    """phi_r for one recipe: W_r [h_g; h_s] + b_r."""
    if len(ingredient_vectors) == 0 or len(instruction_vectors) == 0:
        raise EmptyInputError("a recipe needs at least one ingredient and one instruction vector")
    g = as_tensor(ingredient_vectors).reshape(1, len(ingredient_vectors), -1)
    s = as_tensor(instruction_vectors).reshape(1, len(instruction_vectors), -1)
    return embed_recipes(model, g, None, s, None).reshape(-1)


def embed_images(model, features):
    return linear(features, model.W_v, model.b_v)


def embed_image(model, feature):
    return embed_images(model, as_tensor(feature).reshape(1, -1)).reshape(-1)


# losses ---------------------------------------------------------------------

def cosine_margin_loss(phi_r, phi_v, y, margin=0.1):
    """Per-row loss: 1 - cos for y=+1, max(0, cos - margin) for y=-1."""
    phi_r, phi_v = as_tensor(phi_r), as_tensor(phi_v)
    if phi_r.ndim == 1:
        phi_r, phi_v = phi_r.reshape(1, -1), phi_v.reshape(1, -1)
    y = np.atleast_1d(np.asarray(y))
    if not np.all(np.isin(y, (-1, 1))):
        raise ConfigError("pair labels must be +1 or -1")
    if np.any(np.linalg.norm(phi_r.data, axis=1) == 0) or np.any(np.linalg.norm(phi_v.data, axis=1) == 0):
        raise DegenerateInputError("cosine of a zero-norm embedding")
    cos = cosine_similarity(phi_r, phi_v)
    pos = (y == 1).astype(np.float64)
    neg = 1.0 - pos
    return add(mul(as_tensor(pos), add(as_tensor(np.ones_like(pos)), -cos)),
               mul(as_tensor(neg), relu(add(cos, as_tensor(np.full_like(pos, -margin))))))


def semantic_reg_loss(phi_r, phi_v, c_r, c_v, W_c):
    """Per-row CE(W_c phi_r, c_r) + CE(W_c phi_v, c_v) with the same W_c on both sides."""
    phi_r, phi_v = as_tensor(phi_r), as_tensor(phi_v)
    if phi_r.ndim == 1:
        phi_r, phi_v = phi_r.reshape(1, -1), phi_v.reshape(1, -1)
    ce_r = softmax_cross_entropy(linear(phi_r, W_c), np.atleast_1d(c_r), reduction="none")
    ce_v = softmax_cross_entropy(linear(phi_v, W_c), np.atleast_1d(c_v), reduction="none")
    return add(ce_r, ce_v)


def combine_losses(l_cos, l_reg, reg_weight):
    """mean(L_cos + lambda * L_reg)."""
    if reg_weight == 0:
        return tmean(l_cos)
    return tmean(add(l_cos, scale(l_reg, reg_weight)))


# data ---------------------------------------------------------------------

@dataclass
class JointData:
    """Featurized recipes and images, index-aligned.

    ``image_owner[j]`` is the recipe row of image j; images of a recipe are
    listed in image-id order.
    """

    recipe_ids: list
    ingredients: list
    instructions: list
    categories: np.ndarray
    partitions: list
    image_ids: list
    image_features: np.ndarray
    image_owner: np.ndarray

    def __post_init__(self):
        self.categories = np.asarray(self.categories, dtype=np.int64)
        self.image_owner = np.asarray(self.image_owner, dtype=np.int64)
        self.image_features = np.asarray(self.image_features, dtype=np.float64)
        self.images_of = [[] for _ in self.recipe_ids]
        for j, i in enumerate(self.image_owner):
            self.images_of[i].append(j)
        self.ingr_pad, self.ingr_len = pad_sequences(self.ingredients)
        self.instr_pad, self.instr_len = pad_sequences(self.instructions)

    def rows(self, partitions=None):
        """Recipe rows with at least one image, optionally restricted to partitions."""
        return [i for i, p in enumerate(self.partitions)
                if self.images_of[i] and (partitions is None or p in partitions)]

    def recipe_batch(self, rows):
        rows = np.asarray(rows)
        ti, ts = int(self.ingr_len[rows].max()), int(self.instr_len[rows].max())
        return (self.ingr_pad[rows, :ti], self.ingr_len[rows], self.instr_pad[rows, :ts], self.instr_len[rows])

    def first_images(self, rows):
        return np.array([self.images_of[i][0] for i in rows])


@dataclass
class PairBatch:
    recipe_rows: np.ndarray
    image_rows: np.ndarray
    y: np.ndarray
    c_r: np.ndarray
    c_v: np.ndarray


def sample_pairs(data, batch_size, positive_prob=0.2, rng=None, anchors=None, rows=None):
    """Draw a batch of positive (own image) and negative (another recipe's image) pairs.

    ``anchors`` fixes the recipe rows; otherwise they are drawn uniformly
    from ``rows`` (default: every recipe with an image).
    """
    rng = np.random.default_rng(rng)
    pool = np.asarray(data.rows() if rows is None else rows)
    if len(pool) < 2:
        raise SamplingError("need at least two recipes with images to form negative pairs")
    if not 0 < positive_prob <= 1:
        raise ConfigError("positive probability must lie in (0, 1]")
    anchors = pool[rng.integers(len(pool), size=batch_size)] if anchors is None else np.asarray(anchors)
    y = np.where(rng.random(len(anchors)) < positive_prob, 1, -1)
    images = np.empty(len(anchors), dtype=np.int64)
    for k, i in enumerate(anchors):
        owner = i
        if y[k] == -1:
            other = pool[rng.integers(len(pool) - 1)]
            # skip over the anchor itself so every other recipe is equally likely
            owner = other if other != i else pool[-1]
        imgs = data.images_of[owner]
        images[k] = imgs[rng.integers(len(imgs))]
    c_r = data.categories[anchors]
    c_v = data.categories[data.image_owner[images]]
    return PairBatch(anchors, images, y, c_r, c_v)


def total_loss(batch, model, config, data):
    phi_r = embed_recipes(model, *data.recipe_batch(batch.recipe_rows))
    phi_v = embed_images(model, data.image_features[batch.image_rows])
    l_cos = cosine_margin_loss(phi_r, phi_v, batch.y, config.margin)
    if config.reg_weight == 0:
        return tmean(l_cos)
    l_reg = semantic_reg_loss(phi_r, phi_v, batch.c_r, batch.c_v, model.W_c)
    return combine_losses(l_cos, l_reg, config.reg_weight)


# training ---------------------------------------------------------------------

@dataclass
class TrainConfig:
    margin: float = 0.1
    reg_weight: float = 0.02
    positive_prob: float = 0.2
    batch_size: int = 32
    stages: tuple = (1, 2, 3)
    max_epochs: tuple = (20, 10, 20)
    patience: int = 3
    optimizer: str = "adam"
    lr: float = 1e-3
    seed: int = 0
    d_emb: int = 128
    hidden_ingr: int = 64
    hidden_instr: int = 64
    val_pool: int = 500
    val_repeats: int = 3

    def __post_init__(self):
        self.stages = tuple(int(s) for s in self.stages)
        self.max_epochs = tuple(int(e) for e in self.max_epochs)
        if not 0 < self.margin < 1:
            raise ConfigError("margin must lie in (0, 1)")
        if self.reg_weight < 0:
            raise ConfigError("regularization weight must be >= 0")
        if not 0 < self.positive_prob <= 1:
            raise ConfigError("positive probability must lie in (0, 1]")
        if not self.stages or any(s not in (1, 2, 3) for s in self.stages):
            raise ConfigError("stages must be drawn from 1, 2, 3")
        if len(self.max_epochs) != len(self.stages):
            raise ConfigError("max_epochs needs one entry per stage")
        if self.batch_size < 1 or self.patience < 1:
            raise ConfigError("batch size and patience must be positive")

    def to_dict(self):
        d = asdict(self)
        d["stages"], d["max_epochs"] = list(self.stages), list(self.max_epochs)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown training options {sorted(extra)}")
        return cls(**d)


@dataclass
class TrainingLog:
    config: dict
    epochs: list = field(default_factory=list)
    stage_switches: list = field(default_factory=list)
    best: dict = field(default_factory=dict)

    def to_dict(self):
        return {"config": self.config, "epochs": self.epochs, "stage_switches": self.stage_switches,
                "best": self.best}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def model_for(data, config, n_classes=None):
    n_classes = int(data.categories.max()) + 1 if n_classes is None else n_classes
    return JointModel(data.ingredients[0].shape[1], data.instructions[0].shape[1], data.image_features.shape[1],
                      max(n_classes, 1), config.d_emb, config.hidden_ingr, config.hidden_instr, config.seed)


def embed_rows(model, data, rows):
    """(recipe, first-image) embeddings for recipe rows, without building a graph."""
    rows = list(rows)
    with no_grad():
        R = embed_recipes(model, *data.recipe_batch(rows)).data
        V = embed_images(model, data.image_features[data.first_images(rows)]).data
    return R, V


def validation_scores(model, data, rows, config):
    """(mean MedR, mean R@1) of im2recipe retrieval on validation pools."""
    R, V = embed_rows(model, data, rows)
    n = min(len(rows), config.val_pool)
    rep = evaluate(R, V, n=n, repeats=config.val_repeats, seed=config.seed)
    return rep.mean_medr, rep.mean_recall[1]


def train(model, data, config, val_rows=None):
    """Staged training with MedR-based early stopping.

    Each stage runs until validation MedR has not improved for ``patience``
    epochs or its epoch cap is hit; the next stage resumes from the best
    snapshot so far, which is also what the model holds on return.
    Returns ``(model, TrainingLog)``.
    """
    rng = np.random.default_rng(config.seed)
    train_rows = data.rows(("training",))
    if len(train_rows) < 2:
        raise SamplingError("need at least two training recipes with images")
    if val_rows is None:
        val_rows = data.rows(("validation",))
    if len(val_rows) < 2:
        log.warning("fewer than two validation pairs; validating on the training pairs")
        val_rows = train_rows
    tlog = TrainingLog(config.to_dict())
    best_key, best_snap = (np.inf, 0.0), model.snapshot()
    epoch = 0
    for stage, cap in zip(config.stages, config.max_epochs):
        model.set_stage(stage)
        opt = make_optimizer(list(model.params().values()), config.optimizer, config.lr)
        stage_best, wait, reason = (np.inf, 0.0), 0, "max_epochs"
        for _ in range(cap):
            epoch += 1
            order = rng.permutation(train_rows)
            total = 0.0
            for start in range(0, len(order), config.batch_size):
                batch = sample_pairs(data, 0, config.positive_prob, rng, anchors=order[start:start + config.batch_size],
                                     rows=train_rows)
                loss = total_loss(batch, model, config, data)
                if not np.isfinite(loss.data):
                    model.restore(best_snap)
                    raise TrainingDivergence(f"non-finite loss in epoch {epoch}", checkpoint=best_snap)
                opt.zero_grad()
                loss.backward()
                try:
                    opt.step()
                except TrainingDivergence as exc:
                    model.restore(best_snap)
                    raise TrainingDivergence(str(exc), checkpoint=best_snap) from exc
                total += float(loss.data) * len(batch.y)
            medr, r1 = validation_scores(model, data, val_rows, config)
            tlog.epochs.append({"epoch": epoch, "stage": stage, "train_loss": total / len(order),
                                "val_medr": medr, "val_r1": r1, "seed": config.seed})
            # MedR decides; R@1 only separates epochs with equal MedR
            key = (medr, -r1)
            if key < best_key:
                best_key, best_snap = key, model.snapshot()
                tlog.best = {"epoch": epoch, "stage": stage, "val_medr": medr, "val_r1": r1}
            if key < stage_best:
                stage_best, wait = key, 0
            else:
                wait += 1
                if wait >= config.patience:
                    reason = "plateau"
                    break
        tlog.stage_switches.append({"stage": stage, "after_epoch": epoch, "reason": reason})
        model.restore(best_snap)
    for p in model.params().values():
        p.frozen = False
    return model, tlog


def copy_model(model):
    return copy.deepcopy(model)
