"""Glue between the corpus, the text encoders and the joint model."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from recipe_embed.errors import NotFoundError
from recipe_embed.joint import JointData, JointModel, embed_images, embed_recipes
from recipe_embed.nn import no_grad
from recipe_embed.nn.layers import pad_sequences
from recipe_embed.retrieval import CategorySet, build_categories
from recipe_embed.text import (
    IngredientVectors,
    SkipInstructions,
    extract_ingredient_name,
    encode_instructions,
    tokenize,
    train_skip_instructions,
    train_word_vectors,
)


def ingredient_tokens(recipe, extractor=None):
    return [extract_ingredient_name(tokenize(s), extractor) for s in recipe.ingredients]


def _moments(rows):
    X = np.concatenate(rows)
    return X.mean(axis=0), X.std(axis=0) + 1e-8


@dataclass
class TextEncoders:
    """Word vectors, instruction encoder and per-dimension input standardization.

    Raw word vectors and LSTM encodings are small and strongly correlated,
    which makes the joint encoders slow to train; both inputs are shifted
    and scaled with moments taken from the training recipes.
    """

    word_vectors: IngredientVectors
    skip: SkipInstructions
    extractor: object = None
    ingr_moments: tuple = None
    instr_moments: tuple = None

    def raw_ingredients(self, recipe):
        return self.word_vectors.lookup(ingredient_tokens(recipe, self.extractor))

    def raw_instructions(self, recipe):
        return encode_instructions(self.skip, recipe.instructions)

    def fit_moments(self, recipes):
        self.ingr_moments = _moments([self.raw_ingredients(r) for r in recipes])
        self.instr_moments = _moments([self.raw_instructions(r) for r in recipes])
        return self

    def ingredient_matrix(self, recipe):
        X = self.raw_ingredients(recipe)
        if self.ingr_moments is None:
            return X
        return (X - self.ingr_moments[0]) / self.ingr_moments[1]

    def instruction_matrix(self, recipe):
        X = self.raw_instructions(recipe)
        if self.instr_moments is None:
            return X
        return (X - self.instr_moments[0]) / self.instr_moments[1]

    def moments_dict(self):
        return {"ingredients": [m.tolist() for m in self.ingr_moments],
                "instructions": [m.tolist() for m in self.instr_moments]}

    def set_moments(self, d):
        self.ingr_moments = tuple(np.array(m) for m in d["ingredients"])
        self.instr_moments = tuple(np.array(m) for m in d["instructions"])


def fit_text_encoders(corpus, d_w=64, d_s=64, negatives=5, w2v_epochs=5, skip_epochs=3, seed=0, extractor=None):
    """Word vectors and skip-instructions trained on the training partition."""
    training = [r for r in corpus.recipe_list() if r.partition == "training"] or corpus.recipe_list()
    wv = train_word_vectors([ingredient_tokens(r, extractor) for r in training], d_w=d_w, negatives=negatives,
                            epochs=w2v_epochs, seed=seed)
    skip, _ = train_skip_instructions([r.instructions for r in training], d_s=d_s, epochs=skip_epochs, seed=seed)
    return TextEncoders(wv, skip, extractor).fit_moments(training)


def corpus_categories(corpus):
    """Per-recipe class ids: stored ones when every recipe has one, else built from titles."""
    recipes = corpus.recipe_list()
    if all(r.category is not None for r in recipes):
        return {r.id: r.category for r in recipes}, None
    cats, assignment = build_categories(recipes)
    return assignment, cats


def featurize(corpus, encoders, categories=None):
    """:class:`JointData` for every recipe of ``corpus``."""
    if categories is None:
        categories, _ = corpus_categories(corpus)
    recipes = corpus.recipe_list()
    row = {r.id: i for i, r in enumerate(recipes)}
    images = sorted(corpus.images, key=lambda im: (row[im.recipe_id], im.image_id))
    return JointData(
        recipe_ids=[r.id for r in recipes],
        ingredients=[encoders.ingredient_matrix(r) for r in recipes],
        instructions=[encoders.instruction_matrix(r) for r in recipes],
        categories=np.array([categories.get(r.id, 0) for r in recipes]),
        partitions=[r.partition for r in recipes],
        image_ids=[im.image_id for im in images],
        image_features=np.array([im.feature for im in images]).reshape(len(images), -1),
        image_owner=np.array([row[im.recipe_id] for im in images], dtype=np.int64),
    )


class Embedder:
    """Embeds recipes and images of any corpus with a trained model."""

    def __init__(self, model, encoders):
        self.model = model
        self.encoders = encoders

    def embed_recipes(self, recipes):
        data_ing = [self.encoders.ingredient_matrix(r) for r in recipes]
        data_ins = [self.encoders.instruction_matrix(r) for r in recipes]
        gi, li = pad_sequences(data_ing)
        si, ls = pad_sequences(data_ins)
        with no_grad():
            return embed_recipes(self.model, gi, li, si, ls).data

    def embed_images(self, features):
        with no_grad():
            return embed_images(self.model, np.asarray(features, dtype=np.float64)).data

    def embed_pairs(self, corpus):
        """(recipe ids, recipe embeddings, first-image embeddings) for recipes with images."""
        by = corpus.images_by_recipe()
        recipes = [r for r in corpus.recipe_list() if by.get(r.id)]
        ids = [r.id for r in recipes]
        return ids, self.embed_recipes(recipes), self.embed_images([by[i][0].feature for i in ids])


# model directories ------------------------------------------------------------

MODEL_FILE = "model.json"
VECTORS_FILE = "vectors.txt"
SKIP_FILE = "skip.json"
MOMENTS_FILE = "moments.json"
CATEGORIES_FILE = "categories.json"


def save_encoders(directory, encoders):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    encoders.word_vectors.save(directory / VECTORS_FILE)
    encoders.skip.save(directory / SKIP_FILE)
    if encoders.ingr_moments is not None:
        (directory / MOMENTS_FILE).write_text(json.dumps(encoders.moments_dict()))


def load_encoders(directory):
    directory = Path(directory)
    for name in (VECTORS_FILE, SKIP_FILE):
        if not (directory / name).exists():
            raise NotFoundError(f"{directory / name} is missing")
    enc = TextEncoders(IngredientVectors.load(directory / VECTORS_FILE), SkipInstructions.load(directory / SKIP_FILE))
    if (directory / MOMENTS_FILE).exists():
        enc.set_moments(json.loads((directory / MOMENTS_FILE).read_text()))
    return enc


def save_bundle(directory, model, encoders, categories=None):
    """Everything needed to embed new recipes and images: model, encoders and categories."""
    save_encoders(directory, encoders)
    model.save(Path(directory) / MODEL_FILE)
    if categories is not None:
        (Path(directory) / CATEGORIES_FILE).write_text(json.dumps(categories.to_dict(), sort_keys=True))


def load_bundle(directory):
    """``(Embedder, CategorySet or None)`` from a directory written by :func:`save_bundle`."""
    directory = Path(directory)
    if not (directory / MODEL_FILE).exists():
        raise NotFoundError(f"{directory / MODEL_FILE} is missing")
    model, _ = JointModel.load(directory / MODEL_FILE)
    cats = None
    if (directory / CATEGORIES_FILE).exists():
        cats = CategorySet.from_dict(json.loads((directory / CATEGORIES_FILE).read_text()))
    return Embedder(model, load_encoders(directory)), cats
