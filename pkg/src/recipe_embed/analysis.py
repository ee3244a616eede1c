"""Embedding-space probes: concept arithmetic, interpolation and per-unit activations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from recipe_embed.errors import ConfigError, DegenerateInputError, DimensionError, NotFoundError
from recipe_embed.retrieval import rank

SPACES = ("recipe", "image")


class EmbeddingTable:
    """Item ids (sorted), titles and the recipe/image embeddings of each item.

    Tie-breaking everywhere follows the sorted id order.
    """

    def __init__(self, ids, titles, recipe, image=None):
        order = np.argsort(np.asarray(ids, dtype=object).astype(str), kind="stable")
        self.ids = [str(ids[i]) for i in order]
        if len(set(self.ids)) != len(self.ids):
            raise ConfigError("item ids must be unique")
        self.titles = [titles[i] for i in order]
        self.spaces = {"recipe": np.asarray(recipe, dtype=np.float64)[order]}
        if image is not None:
            self.spaces["image"] = np.asarray(image, dtype=np.float64)[order]
        for X in self.spaces.values():
            if X.ndim != 2 or len(X) != len(self.ids):
                raise DimensionError("embeddings must be (n_items, d) and match the ids")

    def __len__(self):
        return len(self.ids)

    def space(self, name):
        if name not in self.spaces:
            raise ConfigError(f"no {name!r} embeddings (have {sorted(self.spaces)})")
        return self.spaces[name]

    def scaled(self, c):
        out = EmbeddingTable.__new__(EmbeddingTable)
        out.ids, out.titles = self.ids, self.titles
        out.spaces = {k: c * v for k, v in self.spaces.items()}
        return out


@dataclass
class ConceptVector:
    phrase: str
    members: list
    vector: np.ndarray
    space: str = "recipe"
    degenerate: bool = False


def concept_vector(table, phrase, space="recipe"):
    """Mean embedding of the items whose title contains ``phrase`` (case-insensitive)."""
    needle = phrase.lower()
    rows = [i for i, t in enumerate(table.titles) if needle in (t or "").lower()]
    if not rows:
        raise NotFoundError(f"no title contains {phrase!r}")
    vec = table.space(space)[rows].mean(axis=0)
    return ConceptVector(phrase, [table.ids[i] for i in rows], vec, space, bool(np.linalg.norm(vec) < 1e-12))


def _neighbours(table, query, space, k, exclude=()):
    X = table.space(space)
    if query.shape != (X.shape[1],):
        raise DimensionError(f"query of shape {query.shape} in a {X.shape[1]}-dimensional space")
    if np.linalg.norm(query) == 0:
        raise DegenerateInputError("query vector is zero")
    excluded = set(exclude)
    rows = np.array([i for i, item in enumerate(table.ids) if item not in excluded], dtype=np.int64)
    if len(rows) == 0 or k <= 0:
        return []
    order = rank(query, X[rows], ids=rows)[:k]
    q = query / np.linalg.norm(query)
    out = []
    for i in order:
        x = X[i]
        n = np.linalg.norm(x)
        out.append((table.ids[i], float(x @ q / n) if n else 0.0))
    return out


def _same_space(*concepts):
    spaces = {c.space for c in concepts}
    dims = {c.vector.shape for c in concepts}
    if len(spaces) != 1 or len(dims) != 1:
        raise DimensionError("concepts come from different spaces or dimensions")
    return spaces.pop()


def analogy(a, b, c, table, k=5):
    """Nearest items to v(a) - v(b) + v(c), leaving out the members of a, b and c."""
    space = _same_space(a, b, c)
    target = a.vector - b.vector + c.vector
    if np.linalg.norm(target) < 1e-12:
        raise DegenerateInputError("analogy vector is zero")
    return _neighbours(table, target, space, k, exclude=set(a.members) | set(b.members) | set(c.members))


def interpolate(c1, c2, x, table, k=5):
    """Nearest items to x * v(c1) + (1 - x) * v(c2).

    The smaller weight is always derived from the larger one, so swapping
    the concepts and passing 1 - x builds the very same vector.
    """
    if not 0 <= x <= 1:
        raise ConfigError("x must lie in [0, 1]")
    space = _same_space(c1, c2)
    if x >= 0.5:
        w1 = float(x)
        w2 = 1.0 - w1
    else:
        w2 = 1.0 - float(x)
        w1 = 1.0 - w2
    return _neighbours(table, w1 * c1.vector + w2 * c2.vector, space, k)


def top_unit_activations(table, unit, k=10, space="recipe"):
    """Items with the largest value on coordinate ``unit``, with both modalities side by side."""
    X = table.space(space)
    if not 0 <= unit < X.shape[1]:
        raise DimensionError(f"unit {unit} outside [0, {X.shape[1]})")
    if k <= 0:
        return []
    order = np.lexsort((np.arange(len(X)), -X[:, unit]))[:k]
    out = []
    for i in order:
        row = {"id": table.ids[i], "title": table.titles[i]}
        for name, M in sorted(table.spaces.items()):
            row[name] = float(M[i, unit])
        out.append(row)
    return out


def neighbours_tsv(query, results, table):
    """TSV lines: query, rank, item id, title, cosine."""
    title = dict(zip(table.ids, table.titles))
    lines = [f"{query}\t{r}\t{item}\t{title[item]}\t{score!r}" for r, (item, score) in enumerate(results, 1)]
    return "\n".join(lines) + ("\n" if lines else "")


TSV_HEADER = "query\trank\titem_id\ttitle\tcosine\n"
