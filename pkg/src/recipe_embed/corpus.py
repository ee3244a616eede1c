"""Layer-1 recipes, Layer-2 images, deduplication and partitioning."""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from recipe_embed.errors import DimensionError, EmptyInputError, IntegrityError, ParseError

log = logging.getLogger(__name__)

PARTITIONS = ("training", "validation", "test")
PARTITION_RANK = {p: k for k, p in enumerate(PARTITIONS)}
SOURCES = ("site", "search")


@dataclass
class Recipe:
    id: str
    title: str
    ingredients: list[str]
    instructions: list[str]
    partition: str = "training"
    units: Optional[list] = None
    quantities: Optional[list] = None
    nutrition: Optional[dict] = None
    category: Optional[int] = None

    def validate(self, locus=None):
        locus = locus or f"recipe {self.id!r}"
        if not isinstance(self.id, str) or not self.id:
            raise ParseError("id must be a non-empty string", locus)
        if not isinstance(self.title, str):
            raise ParseError("title must be a string", locus)
        for key in ("ingredients", "instructions"):
            val = getattr(self, key)
            if not isinstance(val, list) or not val or not all(isinstance(s, str) for s in val):
                raise ParseError(f"{key} must be a non-empty list of strings", locus)
        if self.partition not in PARTITIONS:
            raise ParseError(f"partition {self.partition!r} not in {PARTITIONS}", locus)
        for key in ("units", "quantities"):
            val = getattr(self, key)
            if val is not None and (not isinstance(val, list) or len(val) != len(self.ingredients)):
                raise ParseError(f"{key} must parallel the {len(self.ingredients)} ingredients", locus)
        if self.category is not None and (not isinstance(self.category, int) or self.category < 0):
            raise ParseError("category must be a non-negative integer", locus)

    def to_dict(self):
        d = {
            "id": self.id,
            "title": self.title,
            "ingredients": list(self.ingredients),
            "instructions": list(self.instructions),
            "partition": self.partition,
        }
        for key in ("units", "quantities", "nutrition", "category"):
            val = getattr(self, key)
            if val is not None:
                d[key] = val
        return d

    @classmethod
    def from_dict(cls, d, locus=None):
        if not isinstance(d, dict):
            raise ParseError("record is not an object", locus)
        known = {"id", "title", "ingredients", "instructions", "partition", "units", "quantities", "nutrition", "category"}
        extra = set(d) - known
        if extra:
            raise ParseError(f"unknown fields {sorted(extra)}", locus)
        missing = {"id", "title", "ingredients", "instructions"} - set(d)
        if missing:
            raise ParseError(f"missing fields {sorted(missing)}", locus)
        r = cls(**{k: d[k] for k in d})
        r.validate(locus)
        return r


@dataclass
class ImageRecord:
    image_id: str
    recipe_id: str
    feature: np.ndarray
    source: str = "site"

    def to_dict(self):
        return {
            "image_id": self.image_id,
            "recipe_id": self.recipe_id,
            "feature": self.feature.tolist(),
            "source": self.source,
        }


@dataclass
class DedupReport:
    exact_clusters: list = field(default_factory=list)
    near_pairs: list = field(default_factory=list)
    near_threshold: float = 0.0
    cross_partition_threshold: float = 0.0
    normalized: bool = True
    counts: dict = field(default_factory=dict)

    @property
    def removed_ids(self):
        out = [i for cl in self.exact_clusters for i in cl["removed"]]
        out += [p["removed"] for p in self.near_pairs]
        return out

    def to_dict(self):
        return {
            "exact_clusters": self.exact_clusters,
            "near_pairs": self.near_pairs,
            "near_threshold": self.near_threshold,
            "cross_partition_threshold": self.cross_partition_threshold,
            "normalized": self.normalized,
            "counts": self.counts,
        }


class Corpus:
    """In-memory recipes and images indexed by id. Recipe order is load order."""

    def __init__(self, recipes, images=(), d_img=None):
        self.recipes: dict[str, Recipe] = {}
        for r in recipes:
            if r.id in self.recipes:
                raise IntegrityError(f"duplicate recipe id {r.id!r}")
            self.recipes[r.id] = r
        self.images: list[ImageRecord] = []
        self.image_index: dict[str, int] = {}
        self.d_img = d_img
        for im in images:
            self.add_image(im)

    def add_image(self, im):
        if im.image_id in self.image_index:
            raise IntegrityError(f"duplicate image id {im.image_id!r}")
        if im.recipe_id not in self.recipes:
            raise IntegrityError(f"image {im.image_id!r} references missing recipe {im.recipe_id!r}")
        if self.d_img is None:
            self.d_img = len(im.feature)
        if len(im.feature) != self.d_img:
            raise DimensionError(f"image {im.image_id!r} has {len(im.feature)} features, expected {self.d_img}")
        self.image_index[im.image_id] = len(self.images)
        self.images.append(im)

    @property
    def counts(self):
        return len(self.recipes), len(self.images)

    def recipe_list(self):
        return list(self.recipes.values())

    def images_by_recipe(self):
        out = defaultdict(list)
        for im in self.images:
            out[im.recipe_id].append(im)
        for ims in out.values():
            ims.sort(key=lambda im: im.image_id)
        return out

    def partition_of(self, im):
        return self.recipes[im.recipe_id].partition

    def subset(self, partitions):
        keep = [r for r in self.recipes.values() if r.partition in partitions]
        ids = {r.id for r in keep}
        return Corpus(keep, [im for im in self.images if im.recipe_id in ids], d_img=self.d_img)

    def with_images(self, images):
        return Corpus(self.recipes.values(), images, d_img=self.d_img)


# I/O ----------------------------------------------------------------------

def _read_jsonl(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", f"{path}:{lineno}") from exc


def read_layer1(path):
    return [Recipe.from_dict(d, f"{path}:{lineno}") for lineno, d in _read_jsonl(path)]


def _image_from_dict(d, locus):
    if not isinstance(d, dict):
        raise ParseError("record is not an object", locus)
    missing = {"image_id", "recipe_id", "feature"} - set(d)
    if missing:
        raise ParseError(f"missing fields {sorted(missing)}", locus)
    feat = d["feature"]
    if not isinstance(feat, list) or not feat or not all(isinstance(x, (int, float)) for x in feat):
        raise ParseError("feature must be a non-empty list of numbers", locus)
    arr = np.asarray(feat, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ParseError("feature has non-finite values", locus)
    source = d.get("source", "site")
    if source not in SOURCES:
        raise ParseError(f"source {source!r} not in {SOURCES}", locus)
    return ImageRecord(str(d["image_id"]), str(d["recipe_id"]), arr, source)


def manifest_path(npy_path):
    p = Path(npy_path)
    return p.with_name(p.stem + ".manifest.tsv")


def read_layer2(path):
    """Images from JSONL, or from a ``.npy`` feature matrix plus ``<stem>.manifest.tsv``."""
    path = Path(path)
    if path.suffix == ".npy":
        feats = np.load(path)
        if feats.ndim != 2:
            raise ParseError("feature matrix must be 2-D", str(path))
        rows = manifest_path(path).read_text().splitlines()
        header, rows = rows[0].split("\t"), [r for r in rows[1:] if r.strip()]
        if header[:2] != ["image_id", "recipe_id"]:
            raise ParseError("manifest header must start with image_id, recipe_id", str(manifest_path(path)))
        if len(rows) != len(feats):
            raise ParseError(f"{len(rows)} manifest rows for {len(feats)} feature rows", str(path))
        out = []
        for k, row in enumerate(rows):
            cols = row.split("\t")
            source = cols[2] if len(cols) > 2 else "site"
            out.append(_image_from_dict(
                {"image_id": cols[0], "recipe_id": cols[1], "feature": feats[k].tolist(), "source": source},
                f"{manifest_path(path)}:{k + 2}"))
        return out
    return [_image_from_dict(d, f"{path}:{lineno}") for lineno, d in _read_jsonl(path)]


def load_corpus(layer1_path, layer2_path=None):
    recipes = read_layer1(layer1_path)
    images = read_layer2(layer2_path) if layer2_path else []
    return Corpus(recipes, images)


def write_layer1(path, recipes):
    with open(path, "w") as fh:
        for r in recipes:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def write_layer2(path, images):
    path = Path(path)
    if path.suffix == ".npy":
        np.save(path, np.stack([im.feature for im in images]))
        lines = ["image_id\trecipe_id\tsource"] + [f"{im.image_id}\t{im.recipe_id}\t{im.source}" for im in images]
        manifest_path(path).write_text("\n".join(lines) + "\n")
        return
    with open(path, "w") as fh:
        for im in images:
            fh.write(json.dumps(im.to_dict(), sort_keys=True) + "\n")


def save_corpus(corpus, layer1_path, layer2_path=None):
    write_layer1(layer1_path, corpus.recipes.values())
    if layer2_path is not None:
        write_layer2(layer2_path, corpus.images)


# deduplication ---------------------------------------------------------------

def _unit_rows(X):
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return np.where(norms > 0, X / np.where(norms > 0, norms, 1.0), X)


def dedup_images(images, partitions, exact=True, near_threshold=0.1, cross_partition_threshold=0.1,
                 normalize=True, block=256):
    """Collapse exact and near-duplicate images.

    ``partitions`` maps recipe id to partition name. Exact duplicates
    (distance 0) are collapsed first. Then images are visited in priority
    order (training before validation before test, then by image id) and an
    image is dropped when an already-kept image lies closer than
    ``near_threshold`` (same partition) or ``cross_partition_threshold``
    (different partition). Distances are euclidean, on unit-normalized
    features when ``normalize`` is set.

    Returns ``(kept, report)``; ``kept`` preserves the input order.
    """
    if near_threshold < 0 or cross_partition_threshold < 0:
        raise ValueError("thresholds must be >= 0")
    if cross_partition_threshold < near_threshold:
        raise ValueError("cross_partition_threshold must be >= near_threshold")
    images = list(images)
    report = DedupReport(near_threshold=near_threshold, cross_partition_threshold=cross_partition_threshold,
                         normalized=normalize)
    if not images:
        report.counts = {p: {"kept": 0, "removed": 0} for p in PARTITIONS}
        return [], report
    d = len(images[0].feature)
    for im in images:
        if len(im.feature) != d:
            raise DimensionError(f"image {im.image_id!r} has {len(im.feature)} features, expected {d}")

    part = [partitions[im.recipe_id] for im in images]
    priority = sorted(range(len(images)), key=lambda k: (PARTITION_RANK[part[k]], images[k].image_id))
    removed = np.zeros(len(images), dtype=bool)

    if exact:
        groups = defaultdict(list)
        for k in priority:
            # + 0.0 folds -0.0 onto 0.0, both at distance 0
            groups[(np.asarray(images[k].feature, dtype=np.float64) + 0.0).tobytes()].append(k)
        for members in groups.values():
            if len(members) > 1:
                rep, rest = members[0], members[1:]
                removed[rest] = True
                report.exact_clusters.append({
                    "representative": images[rep].image_id,
                    "removed": [images[k].image_id for k in rest],
                    "size": len(members),
                })
        report.exact_clusters.sort(key=lambda c: c["representative"])

    X = np.stack([np.asarray(im.feature, dtype=np.float64) for im in images])
    if normalize:
        X = _unit_rows(X)
    prank = np.array([PARTITION_RANK[p] for p in part])
    order = [k for k in priority if not removed[k]]
    kept_idx: list[int] = []
    near_sq, cross_sq = near_threshold ** 2, cross_partition_threshold ** 2

    def sq_dist(A, B):
        D = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2 * A @ B.T
        return np.maximum(D, 0.0)

    for start in range(0, len(order), block):
        chunk = order[start:start + block]
        before = np.array(kept_idx, dtype=np.intp)
        D_prev = sq_dist(X[chunk], X[before]) if len(before) else None
        D_chunk = sq_dist(X[chunk], X[chunk])
        kept_in_chunk: list[int] = []
        for j, k in enumerate(chunk):
            cand_idx, cand_d = [], []
            if D_prev is not None:
                cand_idx.append(before)
                cand_d.append(D_prev[j])
            if kept_in_chunk:
                cand_idx.append(np.array([chunk[i] for i in kept_in_chunk], dtype=np.intp))
                cand_d.append(D_chunk[j, kept_in_chunk])
            hit = None
            if cand_idx:
                idx = np.concatenate(cand_idx)
                dist = np.concatenate(cand_d)
                limit = np.where(prank[idx] == prank[k], near_sq, cross_sq)
                close = np.flatnonzero(dist < limit)
                if close.size:
                    hit = int(idx[close[np.argmin(dist[close])]])
            if hit is None:
                kept_in_chunk.append(j)
                kept_idx.append(k)
            else:
                removed[k] = True
                report.near_pairs.append({
                    "removed": images[k].image_id,
                    "kept": images[hit].image_id,
                    "distance": float(np.linalg.norm(X[k] - X[hit])),
                    "cross_partition": bool(prank[hit] != prank[k]),
                })
    kept = [im for k, im in enumerate(images) if not removed[k]]
    counts = {p: {"kept": 0, "removed": 0} for p in PARTITIONS}
    for k in range(len(images)):
        counts[part[k]]["removed" if removed[k] else "kept"] += 1
    report.counts = counts
    return kept, report


# partitions ------------------------------------------------------------------

def partition_sizes(n, ratios):
    """Largest-remainder split of ``n`` items; remainder ties go to the earlier partition."""
    fr = [Fraction(str(r)) if isinstance(r, float) else Fraction(r) for r in ratios]
    if any(f < 0 for f in fr) or sum(fr) != 1:
        raise ValueError(f"ratios must be non-negative and sum to 1, got {ratios}")
    exact = [f * n for f in fr]
    sizes = [int(e) for e in exact]
    left = n - sum(sizes)
    by_remainder = sorted(range(len(fr)), key=lambda k: (-(exact[k] - sizes[k]), k))
    for k in by_remainder[:left]:
        sizes[k] += 1
    return sizes


def assign_partitions(recipes, ratios=(0.7, 0.15, 0.15), seed=0):
    """Return copies of ``recipes`` with partitions assigned by a seeded shuffle.

    The split is by recipe, so every image follows its recipe.
    """
    recipes = list(recipes)
    if not recipes:
        raise EmptyInputError("cannot partition an empty corpus")
    sizes = partition_sizes(len(recipes), ratios)
    ids = sorted(r.id for r in recipes)
    perm = np.random.default_rng(seed).permutation(len(ids))
    label = {}
    pos = 0
    for name, size in zip(PARTITIONS, sizes):
        for k in perm[pos:pos + size]:
            label[ids[k]] = name
        pos += size
    out = []
    for r in recipes:
        d = r.to_dict()
        d["partition"] = label[r.id]
        out.append(Recipe.from_dict(d))
    return out


def distribute_title_images(recipes, images_by_title):
    """Spread images queried by title round-robin over the recipes sharing that title.

    ``images_by_title`` maps a title to a list of ``(image_id, feature, source)``.
    Recipes sharing a title are visited in sorted-id order.
    """
    by_title = defaultdict(list)
    for r in recipes:
        by_title[r.title.strip().lower()].append(r.id)
    out = []
    for title, items in images_by_title.items():
        owners = sorted(by_title.get(title.strip().lower(), []))
        if not owners:
            log.warning("no recipe titled %r; %d images dropped", title, len(items))
            continue
        for k, (image_id, feature, source) in enumerate(items):
            out.append(ImageRecord(image_id, owners[k % len(owners)], np.asarray(feature, dtype=np.float64), source))
    return out


# statistics ------------------------------------------------------------------

def corpus_stats(corpus):
    """Histograms and means of ingredients, instructions and images per recipe."""
    recipes = corpus.recipe_list()
    n = len(recipes)
    n_images = Counter(im.recipe_id for im in corpus.images)
    series = {
        "ingredients": [len(r.ingredients) for r in recipes],
        "instructions": [len(r.instructions) for r in recipes],
        "images": [n_images.get(r.id, 0) for r in recipes],
    }
    titles = Counter(r.title.strip().lower() for r in recipes)
    shared = sum(c for c in titles.values() if c > 1)
    return {
        "recipes": n,
        "images": len(corpus.images),
        "means": {k: (float(np.mean(v)) if v else 0.0) for k, v in series.items()},
        "histograms": {k: {str(val): cnt for val, cnt in sorted(Counter(v).items())} for k, v in series.items()},
        "duplicate_title_rate": shared / n if n else 0.0,
        "recipes_without_images": sum(1 for v in series["images"] if v == 0),
        "partitions": {p: sum(1 for r in recipes if r.partition == p) for p in PARTITIONS},
    }
