"""Title-derived semantic categories and the MedR / R@K retrieval protocol."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from recipe_embed.errors import ConfigError, DegenerateInputError, DimensionError

log = logging.getLogger(__name__)

BACKGROUND = "<background>"
RECALL_KS = (1, 5, 10)
DIRECTIONS = ("im2recipe", "recipe2im")

# a small Food-101-style seed list; callers can pass their own
SEED_CATEGORIES = (
    "apple pie", "baby back ribs", "beef carpaccio", "beef tartare", "beet salad", "breakfast burrito",
    "caesar salad", "carrot cake", "cheese plate", "cheesecake", "chicken curry", "chicken quesadilla",
    "chicken wings", "chocolate cake", "chocolate mousse", "churros", "clam chowder", "club sandwich",
    "crab cakes", "creme brulee", "cup cakes", "deviled eggs", "donuts", "dumplings", "eggs benedict",
    "falafel", "filet mignon", "fish and chips", "french fries", "french onion soup", "french toast",
    "fried calamari", "fried rice", "frozen yogurt", "garlic bread", "greek salad", "grilled cheese sandwich",
    "grilled salmon", "guacamole", "hamburger", "hot and sour soup", "hot dog", "huevos rancheros", "hummus",
    "ice cream", "lasagna", "lobster bisque", "macaroni and cheese", "macarons", "miso soup", "mussels",
    "nachos", "omelette", "onion rings", "oysters", "pad thai", "paella", "pancakes", "panna cotta",
    "peking duck", "pho", "pizza", "pork chop", "poutine", "prime rib", "pulled pork sandwich", "ramen",
    "ravioli", "red velvet cake", "risotto", "samosa", "sashimi", "scallops", "seaweed salad",
    "shrimp and grits", "spaghetti bolognese", "spaghetti carbonara", "spring rolls", "steak",
    "strawberry shortcake", "sushi", "tacos", "takoyaki", "tiramisu", "tuna tartare", "waffles",
)

TITLE_STOPWORDS = frozenset("""
a an and or of the to for with in on at by from my our your his her their its is are this that
easy best quick quickest homemade simple classic super minute minutes recipe recipes ever perfect
healthy delicious amazing favorite favourite famous yummy tasty ultimate style new old
""".split())

# bigrams the manual curation would throw away: digits, stray characters, filler words
DEFAULT_BLOCKLIST = (
    r"[^a-z ]",
    r"\b(?:%s)\b" % "|".join(sorted(TITLE_STOPWORDS)),
)


def _title_words(title):
    return re.findall(r"[a-z0-9'&]+", title.lower())


def _contains(words, phrase_words):
    n = len(phrase_words)
    return any(words[i:i + n] == phrase_words for i in range(len(words) - n + 1))


@dataclass
class CategorySet:
    """Category names with id 0 reserved for the background class."""

    names: list = field(default_factory=lambda: [BACKGROUND])
    frequencies: list = field(default_factory=lambda: [0])

    def __post_init__(self):
        if self.names[0] != BACKGROUND:
            raise ConfigError("category 0 must be the background class")
        if len(set(self.names)) != len(self.names):
            raise ConfigError("category names must be unique")
        if any(f <= 0 for f in self.frequencies[1:]):
            raise ConfigError("non-background categories need a positive frequency")

    def __len__(self):
        return len(self.names)

    def id_of(self, name):
        return self.names.index(name)

    def assign(self, title):
        """Matching category of highest frequency (ties: name order), else background."""
        words = _title_words(title or "")
        best, key = 0, None
        for k in range(1, len(self.names)):
            if _contains(words, self.names[k].split()):
                cand = (-self.frequencies[k], self.names[k])
                if key is None or cand < key:
                    best, key = k, cand
        return best

    def to_dict(self):
        return {"names": self.names, "frequencies": self.frequencies}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["names"]), list(d["frequencies"]))


def title_bigrams(title):
    words = _title_words(title)
    return [f"{a} {b}" for a, b in zip(words, words[1:])]


def build_categories(recipes, seed_categories=SEED_CATEGORIES, top_n=2000, blocklist=DEFAULT_BLOCKLIST,
                     extra_blocklist=()):
    """Categories from training titles plus an id assignment for every recipe.

    Frequencies count training titles containing the phrase. Returns
    ``(CategorySet, {recipe_id: category_id})``.
    """
    recipes = list(recipes)
    training = [r for r in recipes if r.partition == "training"]
    title_words = [_title_words(r.title) for r in training]
    counts = Counter()
    for r in training:
        counts.update(set(title_bigrams(r.title)))
    patterns = [re.compile(p) for p in tuple(blocklist) + tuple(extra_blocklist)]
    ranked = sorted(counts, key=lambda b: (-counts[b], b))[:top_n]
    candidates = {b: counts[b] for b in ranked if not any(p.search(b) for p in patterns)}
    for seed in seed_categories:
        sw = seed.lower().split()
        freq = sum(1 for words in title_words if _contains(words, sw))
        if freq > 0:
            candidates[seed.lower()] = freq
    ordered = sorted(candidates, key=lambda n: (-candidates[n], n))
    cats = CategorySet([BACKGROUND] + ordered, [0] + [candidates[n] for n in ordered])
    return cats, {r.id: cats.assign(r.title) for r in recipes}


def category_coverage(assignment):
    vals = list(assignment.values())
    return sum(1 for v in vals if v != 0) / len(vals) if vals else 0.0


# ranking ---------------------------------------------------------------------

def _unit_rows(X, what):
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateInputError(f"zero-norm {what} embedding")
    return X / norms


# cosines closer than this are ties; matrix products may round equal dot products differently
TIE_TOLERANCE = 1e-12


def _tie_groups(sorted_scores):
    """Group labels for descending scores: a new group starts at every gap wider than the tolerance."""
    gaps = np.diff(sorted_scores) < -TIE_TOLERANCE
    return np.concatenate([[0], np.cumsum(gaps)])


def rank(query, candidates, ids=None):
    """Candidate ids by descending cosine to ``query``; ties go to the smaller id.

    Zero-norm candidates are left out (and logged).
    """
    q = _unit_rows(np.asarray(query, dtype=np.float64).reshape(1, -1), "query")[0]
    C = np.asarray(candidates, dtype=np.float64)
    if C.ndim != 2 or C.shape[1] != q.shape[0]:
        raise DimensionError(f"candidates {C.shape} do not match query of length {q.shape[0]}")
    ids = np.arange(len(C)) if ids is None else np.asarray(ids)
    norms = np.linalg.norm(C, axis=1)
    ok = norms > 0
    if not ok.all():
        log.warning("rank: %d zero-norm candidates excluded", int((~ok).sum()))
    scores = (C[ok] / norms[ok, None]) @ q
    kept = ids[ok]
    order = np.lexsort((kept, -scores))
    groups = _tie_groups(scores[order])
    order = order[np.lexsort((kept[order], groups))]
    return kept[order]


def truth_ranks(queries, candidates, ids=None):
    """1-based rank of candidate i for query i, using :func:`rank`'s ordering."""
    Q, C = _unit_rows(queries, "query"), _unit_rows(candidates, "candidate")
    ids = np.arange(len(C)) if ids is None else np.asarray(ids)
    S = Q @ C.T
    own = np.diag(S)[:, None]
    tied = np.abs(S - own) <= TIE_TOLERANCE
    before = ((S > own) & ~tied) | (tied & (ids[None, :] < ids[:, None]))
    return 1 + before.sum(axis=1)


def median_rank(ranks, convention="lower"):
    """Median of integer ranks; for even counts the lower middle value (or the mean of both)."""
    r = np.sort(np.asarray(ranks))
    if r.size == 0:
        raise ConfigError("median of no ranks")
    mid = (r.size - 1) // 2
    if r.size % 2 == 1 or convention == "lower":
        return float(r[mid])
    if convention == "mean":
        return float((r[mid] + r[mid + 1]) / 2)
    raise ConfigError(f"unknown median convention {convention!r}")


def recall_at(ranks, k):
    return float(np.mean(np.asarray(ranks) <= k))


@dataclass
class RetrievalReport:
    direction: str
    n: int
    repeats: int
    seed: int
    medr: list
    recalls: dict
    ranks: list
    pairs: list
    median_convention: str = "lower"
    tie_rule: str = "ascending candidate id"
    warnings: list = field(default_factory=list)

    @property
    def mean_medr(self):
        return float(np.mean(self.medr))

    @property
    def mean_recall(self):
        return {k: float(np.mean(v)) for k, v in self.recalls.items()}

    def histograms(self):
        out = []
        for rk in self.ranks:
            c = Counter(int(x) for x in rk)
            out.append({str(k): c[k] for k in sorted(c)})
        return out

    def to_dict(self):
        return {
            "direction": self.direction, "n": self.n, "repeats": self.repeats, "seed": self.seed,
            "medr": self.medr, "mean_medr": self.mean_medr,
            "recall": {str(k): v for k, v in self.recalls.items()},
            "mean_recall": {str(k): v for k, v in self.mean_recall.items()},
            "median_convention": self.median_convention, "tie_rule": self.tie_rule,
            "warnings": self.warnings, "pairs": self.pairs, "ranks": self.ranks,
            "rank_histograms": self.histograms(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def to_tsv(self):
        lines = ["direction\trepeat\tmedr\t" + "\t".join(f"r@{k}" for k in RECALL_KS)]
        for i, m in enumerate(self.medr):
            lines.append(f"{self.direction}\t{i}\t{m!r}\t" + "\t".join(repr(self.recalls[k][i]) for k in RECALL_KS))
        lines.append(f"{self.direction}\tmean\t{self.mean_medr!r}\t"
                     + "\t".join(repr(self.mean_recall[k]) for k in RECALL_KS))
        return "\n".join(lines) + "\n"


def sample_pools(n_pairs, n, repeats, seed):
    """Per-repeat sorted index sets of size ``n`` drawn without replacement."""
    rng = np.random.default_rng(seed)
    return [np.sort(rng.choice(n_pairs, n, replace=False)) for _ in range(repeats)]


def evaluate(recipe_emb, image_emb, n=1000, repeats=10, seed=0, direction="im2recipe", pair_ids=None,
             median="lower"):
    """Sample ``n`` pairs per repeat and rank every query against the pool.

    Row i of ``recipe_emb`` and ``image_emb`` is a true pair. Candidate ids
    for tie-breaking are row positions. Returns a :class:`RetrievalReport`.
    """
    if direction not in DIRECTIONS:
        raise ConfigError(f"direction must be one of {DIRECTIONS}")
    R = np.asarray(recipe_emb, dtype=np.float64)
    V = np.asarray(image_emb, dtype=np.float64)
    if R.shape != V.shape or R.ndim != 2:
        raise DimensionError(f"recipe {R.shape} and image {V.shape} embeddings must be equal-shape matrices")
    if n < 2:
        raise ConfigError("pool size must be at least 2")
    warnings = []
    if len(R) < n:
        msg = f"only {len(R)} pairs available; pool size shrunk from {n}"
        log.warning(msg)
        warnings.append(msg)
        n = len(R)
        if n < 2:
            raise ConfigError("need at least 2 pairs to evaluate")
    ids = list(range(len(R))) if pair_ids is None else list(pair_ids)
    medr, ranks, pairs = [], [], []
    recalls = {k: [] for k in RECALL_KS}
    for pool in sample_pools(len(R), n, repeats, seed):
        q, c = (V[pool], R[pool]) if direction == "im2recipe" else (R[pool], V[pool])
        r = truth_ranks(q, c, pool)
        medr.append(median_rank(r, median))
        for k in RECALL_KS:
            recalls[k].append(recall_at(r, k))
        ranks.append([int(x) for x in r])
        pairs.append([ids[i] for i in pool])
    return RetrievalReport(direction, n, repeats, seed, medr, recalls, ranks, pairs, median, warnings=warnings)


def evaluate_both(recipe_emb, image_emb, n=1000, repeats=10, seed=0, pair_ids=None, median="lower"):
    return {d: evaluate(recipe_emb, image_emb, n, repeats, seed, d, pair_ids, median) for d in DIRECTIONS}


def category_matched_pairs(pair_ids, categories, seed=0):
    """At most one pair per category (background excluded), picked at random."""
    rng = np.random.default_rng(seed)
    by_cat = {}
    for i, c in enumerate(categories):
        if c != 0:
            by_cat.setdefault(int(c), []).append(i)
    return [pair_ids[group[int(rng.integers(len(group)))]] for _, group in sorted(by_cat.items())]


def evaluate_external(recipe_file, feature_file, embedder, n=1000, repeats=10, seed=0, direction="im2recipe",
                      category_matched=False, categories=None, median="lower"):
    """Embed an external Layer-1/Layer-2 pair of files and evaluate retrieval on it.

    ``embedder`` turns a corpus into ``(pair_ids, recipe_emb, image_emb)``;
    :class:`recipe_embed.pipeline.Embedder` is the standard one. With
    ``category_matched`` only one random pair per category is kept
    (``categories`` maps recipe id to category id).
    """
    from recipe_embed.corpus import load_corpus

    corpus = load_corpus(recipe_file, feature_file)
    if not corpus.recipes or not corpus.images:
        raise ConfigError("external files contain no recipe-image pairs")
    ids, R, V = embedder.embed_pairs(corpus)
    if category_matched:
        if categories is None:
            raise ConfigError("category-matched sampling needs a category assignment")
        keep = set(category_matched_pairs(ids, [categories.get(i, 0) for i in ids], seed))
        rows = [k for k, i in enumerate(ids) if i in keep]
        ids, R, V = [ids[k] for k in rows], R[rows], V[rows]
    return evaluate(R, V, n, repeats, seed, direction, ids, median)
