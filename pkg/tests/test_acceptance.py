"""Acceptance suite: one test per criterion, summarized as PASS/FAIL lines at the end of the run."""

import itertools
import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from recipe_embed.analysis import _neighbours, analogy, concept_vector, interpolate
from recipe_embed.cli import main as cli
from recipe_embed.corpus import ImageRecord, Recipe, dedup_images
from recipe_embed.joint import (
    TrainConfig,
    combine_losses,
    cosine_margin_loss,
    embed_rows,
    model_for,
    sample_pairs,
    total_loss,
    train,
)
from recipe_embed.nn import LSTMCell, Param, cosine_similarity, linear, lstm_step, run_bilstm, softmax_cross_entropy
from recipe_embed.nn.gradcheck import check_gradients, relative_error
from recipe_embed.nn.tensor import Tensor
from recipe_embed.nutrition import (
    UNITS,
    Incomplete,
    NutritionRecord,
    compute_nutrition,
    parse_ingredient,
    read_nutrient_table,
    traffic_lights,
)
from recipe_embed.pipeline import featurize, fit_text_encoders
from recipe_embed.retrieval import evaluate
from recipe_embed.synthetic import generate_synthetic
from recipe_embed.text.word2vec import sgns_loss_and_grads

from test_analysis import additive_space
from test_joint import small_config, tiny_data


def detail(request, text):
    request.node.user_properties.append(("detail", text))


# 1 -------------------------------------------------------------------------

INSTANCES = 20


def _weights(rng, shape):
    return Tensor(rng.normal(size=shape))


def _grad_linear(rng):
    x, W, b = Param(rng.normal(size=(3, 4))), Param(rng.normal(size=(2, 4))), Param(rng.normal(size=2))
    w = _weights(rng, (3, 2))
    return check_gradients(lambda: (linear(x, W, b) * w).sum(), [x, W, b])


def _grad_lstm_step(rng):
    cell = LSTMCell(3, 4, rng)
    x, h, c = Param(rng.normal(size=(2, 3))), Param(rng.normal(size=(2, 4))), Param(rng.normal(size=(2, 4)))
    w1, w2 = _weights(rng, (2, 4)), _weights(rng, (2, 4))

    def f():
        h_t, c_t = lstm_step(cell, x, h, c)
        return (h_t * w1).sum() + (c_t * w2).sum()

    return check_gradients(f, [x, h, c, cell.W, cell.b])


def _grad_bilstm(rng):
    fwd, bwd = LSTMCell(3, 3, rng), LSTMCell(3, 3, rng)
    x = Param(rng.normal(size=(2, 4, 3)))
    lengths = rng.integers(1, 5, 2)
    w = _weights(rng, (2, 6))
    return check_gradients(lambda: (run_bilstm(fwd, bwd, x, lengths) * w).sum(),
                           [x, fwd.W, fwd.b, bwd.W, bwd.b])


def _grad_cosine(rng):
    a, b = Param(rng.normal(size=(3, 5))), Param(rng.normal(size=(3, 5)))
    w = _weights(rng, (3,))
    return check_gradients(lambda: (cosine_similarity(a, b) * w).sum(), [a, b])


def _grad_softmax_ce(rng):
    logits = Param(rng.normal(size=(4, 6)))
    labels = rng.integers(0, 6, 4)
    return check_gradients(lambda: softmax_cross_entropy(logits, labels), [logits])


def _grad_margin(rng):
    while True:
        r, v = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
        cos = np.sum(r * v, axis=1) / (np.linalg.norm(r, axis=1) * np.linalg.norm(v, axis=1))
        # keep clear of the hinge, where the loss has no derivative
        if np.all(np.abs(cos - 0.1) > 1e-3):
            break
    pr, pv = Param(r), Param(v)
    y = rng.choice([-1, 1], 4)
    return check_gradients(lambda: cosine_margin_loss(pr, pv, y, 0.1).sum(), [pr, pv])


def _grad_skipgram(rng, eps=1e-5):
    V, d = 7, 4
    W_in, W_out = rng.normal(scale=0.5, size=(V, d)), rng.normal(scale=0.5, size=(V, d))
    centers, contexts = rng.integers(0, V, 5), rng.integers(0, V, 5)
    negatives = rng.integers(0, V, (5, 3))
    _, g_in, g_out = sgns_loss_and_grads(W_in, W_out, centers, contexts, negatives)
    worst = 0.0
    for W, g in ((W_in, g_in), (W_out, g_out)):
        num = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            orig = W[idx]
            W[idx] = orig + eps
            up = sgns_loss_and_grads(W_in, W_out, centers, contexts, negatives)[0]
            W[idx] = orig - eps
            down = sgns_loss_and_grads(W_in, W_out, centers, contexts, negatives)[0]
            W[idx] = orig
            num[idx] = (up - down) / (2 * eps)
        worst = max(worst, relative_error(g, num))
    return worst


def _grad_joint(rng):
    seed = int(rng.integers(1 << 31))
    data = tiny_data(seed=seed)
    cfg = small_config(reg_weight=float(rng.uniform(0.01, 1.0)), seed=seed)
    model = model_for(data, cfg)
    batch = sample_pairs(data, 2, 0.5, rng=rng)
    return check_gradients(lambda: total_loss(batch, model, cfg, data), list(model.params().values()))


GRAD_OPS = {
    "linear": _grad_linear,
    "lstm step": _grad_lstm_step,
    "bi-lstm encode": _grad_bilstm,
    "cosine": _grad_cosine,
    "softmax cross-entropy": _grad_softmax_ce,
    "cosine-margin loss": _grad_margin,
    "skip-gram": _grad_skipgram,
    "joint loss": _grad_joint,
}


@pytest.mark.acceptance(1, "gradient integrity")
def test_gradient_integrity(request):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {}
    for name, check in GRAD_OPS.items():
        worst[name] = max(check(rng) for _ in range(INSTANCES))
    elapsed = time.perf_counter() - start
    detail(request, f"max rel err {max(worst.values()):.1e} over {INSTANCES} instances x {len(GRAD_OPS)} ops, "
                    f"{elapsed:.0f}s")
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    assert not bad, bad
    assert elapsed < 120


# 2 -------------------------------------------------------------------------

@pytest.mark.acceptance(2, "loss identities")
def test_loss_identities(request):
    a = np.array([[0.5, -2.0, 1.0]])
    e1 = np.array([[1.0, 0.0, 0.0, 0.0, 0.0]])
    # integer vectors of norm 10 and 20: cosines with e1 of exactly 3/10 and 1/20
    b03 = np.array([[3.0, 9.0, 3.0, 1.0, 0.0]])
    b005 = np.array([[1.0, 19.0, 6.0, 1.0, 1.0]])
    assert cosine_margin_loss(a, a, [1]).data[0] == 0.0
    assert cosine_margin_loss(e1, b03, [-1], 0.1).data[0] == pytest.approx(0.2, abs=1e-15)
    assert cosine_margin_loss(e1, b005, [-1], 0.1).data[0] == 0.0
    rng = np.random.default_rng(0)
    r, v = Tensor(rng.normal(size=(6, 5))), Tensor(rng.normal(size=(6, 5)))
    y = rng.choice([-1, 1], 6)
    l_cos = cosine_margin_loss(r, v, y)
    assert float(combine_losses(l_cos, Tensor(rng.normal(size=6)), 0.0).data) == float(l_cos.mean().data)
    total = float(combine_losses(Tensor(np.array([0.2])), Tensor(np.array([1.5])), 0.02).data)
    assert total == pytest.approx(0.23, abs=1e-15)
    detail(request, f"0.2 + 0.02 * 1.5 -> {total!r}")


# 3 -------------------------------------------------------------------------

@pytest.mark.acceptance(3, "random-ranking anchor")
def test_random_ranking(request):
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    R, V = rng.normal(size=(5000, 64)), rng.normal(size=(5000, 64))
    means = {}
    for direction in ("im2recipe", "recipe2im"):
        means[direction] = evaluate(R, V, n=1000, repeats=10, seed=5, direction=direction).mean_medr
    elapsed = time.perf_counter() - start
    detail(request, ", ".join(f"{d} MedR {m:.1f}" for d, m in means.items()) + f", {elapsed:.1f}s")
    assert all(450 <= m <= 550 for m in means.values())
    assert elapsed < 60


# 4 and 5 -------------------------------------------------------------------

POOL = 500


def acceptance_config(reg_weight=0.02, seed=0):
    return TrainConfig(lr=0.003, max_epochs=(200, 50, 200), patience=20, reg_weight=reg_weight, seed=seed)


@pytest.fixture(scope="module")
def synthetic_500():
    start = time.perf_counter()
    corpus = generate_synthetic(500, 10, seed=7)
    enc = fit_text_encoders(corpus, seed=7)
    return featurize(corpus, enc), time.perf_counter() - start


_TRAINED = {}


def trained_scores(data, reg_weight, seed):
    """(MedR, R@1, seconds) of im2recipe retrieval over all 500 pairs after three-stage training."""
    key = (reg_weight, seed)
    if key not in _TRAINED:
        start = time.perf_counter()
        cfg = acceptance_config(reg_weight, seed)
        model, _ = train(model_for(data, cfg), data, cfg)
        R, V = embed_rows(model, data, data.rows())
        rep = evaluate(R, V, n=POOL, repeats=1, seed=0)
        _TRAINED[key] = (rep.mean_medr, rep.mean_recall[1], time.perf_counter() - start)
    return _TRAINED[key]


@pytest.mark.slow
@pytest.mark.acceptance(4, "synthetic end-to-end")
def test_synthetic_end_to_end(request, synthetic_500):
    data, prep = synthetic_500
    medr, r1, secs = trained_scores(data, 0.02, 0)
    detail(request, f"MedR {medr:g}, R@1 {r1:.3f} on a {POOL}-item pool, {prep + secs:.0f}s")
    assert medr <= 5 and r1 >= 0.5
    assert prep + secs < 15 * 60


@pytest.mark.slow
@pytest.mark.acceptance(5, "regularization trend")
def test_regularization_trend(request, synthetic_500):
    data, _ = synthetic_500
    means = {}
    for lam in (0.0, 0.02):
        means[lam] = float(np.mean([trained_scores(data, lam, s)[0] for s in range(5)]))
    detail(request, f"mean MedR over 5 seeds: lambda=0 {means[0.0]:g}, lambda=0.02 {means[0.02]:g}")
    assert means[0.02] <= means[0.0]


# 6 -------------------------------------------------------------------------

def _exact_cosine_key(q, c):
    """Exact monotone image of cos(q, c) for a fixed q: sign(q.c) (q.c)^2 / |c|^2, in rationals."""
    q = [Fraction(float(x)) for x in q]
    c = [Fraction(float(x)) for x in c]
    dot = sum(a * b for a, b in zip(q, c))
    return (1 if dot >= 0 else -1) * dot * dot / sum(b * b for b in c)


def brute_force_report(R, V, pool, direction):
    """Ranks, lower-median MedR and recalls from an exact rational full sort."""
    Q, C = (V, R) if direction == "im2recipe" else (R, V)
    ranks = []
    for qi in pool:
        scored = sorted((-_exact_cosine_key(Q[qi], C[ci]), int(ci)) for ci in pool)
        ranks.append(1 + [ci for _, ci in scored].index(int(qi)))
    s = sorted(ranks)
    medr = float(s[(len(s) - 1) // 2])
    recalls = {k: sum(r <= k for r in ranks) / len(ranks) for k in (1, 5, 10)}
    return ranks, medr, recalls


@pytest.mark.acceptance(6, "retrieval oracle")
def test_retrieval_oracle(request):
    rng = np.random.default_rng(6)
    cases = 0
    for case in range(100):
        total = int(rng.integers(2, 80))
        n = int(rng.integers(2, min(total, 50) + 1))
        d = int(rng.integers(2, 9))
        if case % 3 == 0:
            # small integer vectors with repeated rows, so exact ties occur
            base = rng.integers(-2, 3, size=(5, d)).astype(float)
            base[np.all(base == 0, axis=1)] = 1.0
            R, V = base[rng.integers(0, 5, total)], base[rng.integers(0, 5, total)]
        else:
            R, V = rng.normal(size=(total, d)), rng.normal(size=(total, d))
        direction = ("im2recipe", "recipe2im")[case % 2]
        rep = evaluate(R, V, n=n, repeats=2, seed=int(rng.integers(1 << 30)), direction=direction)
        for i, pool in enumerate(rep.pairs):
            ranks, medr, recalls = brute_force_report(R, V, pool, direction)
            assert rep.ranks[i] == ranks
            assert rep.medr[i] == medr
            assert all(rep.recalls[k][i] == recalls[k] for k in (1, 5, 10))
        cases += 1
    detail(request, f"{cases} cases identical")


# 7 -------------------------------------------------------------------------

def _cross_violations(kept, partitions, threshold):
    X = [im.feature / np.linalg.norm(im.feature) for im in kept]
    bad = 0
    for a, b in itertools.combinations(range(len(kept)), 2):
        if partitions[kept[a].recipe_id] != partitions[kept[b].recipe_id] and np.linalg.norm(X[a] - X[b]) < threshold:
            bad += 1
    return bad


@pytest.mark.acceptance(7, "dedup guarantees")
def test_dedup_guarantees(request):
    rng = np.random.default_rng(7)
    names = ("training", "validation", "test")
    runs = 0
    for _ in range(20):
        n_rec = 30
        partitions = {f"r{i:02d}": names[rng.integers(3)] for i in range(n_rec)}
        base = rng.normal(size=(25, 8))
        feats = base[rng.integers(0, 25, 120)] + rng.normal(scale=0.05, size=(120, 8)) * (rng.random((120, 1)) < 0.5)
        owners = [f"r{k:02d}" for k in rng.integers(0, n_rec, 120)]
        images = [ImageRecord(f"i{k:03d}", owners[k], feats[k]) for k in range(120)]
        near = float(rng.uniform(0.0, 0.1))
        cross = near + float(rng.uniform(0.0, 0.2))
        kept, report = dedup_images(images, partitions, near_threshold=near, cross_partition_threshold=cross)
        assert _cross_violations(kept, partitions, cross) == 0
        again, report2 = dedup_images(kept, partitions, near_threshold=near, cross_partition_threshold=cross)
        assert [im.image_id for im in again] == [im.image_id for im in kept] and not report2.removed_ids
        # exact duplicates always collapse, even with zero thresholds
        exact_only, _ = dedup_images(images, partitions, near_threshold=0.0, cross_partition_threshold=0.0)
        seen = {tuple(im.feature) for im in exact_only}
        assert len(seen) == len(exact_only) == len({tuple(im.feature) for im in images})
        runs += 1
    detail(request, f"{runs} randomized corpora rescanned")


# 8 -------------------------------------------------------------------------

LIGHT_ORDER = {"green": 0, "amber": 1, "red": 2}
NON_MEASURABLE = ("a bunch of {}", "1 slice {}", "2 loaf {}", "a handful of {}", "3 sprigs {}")
UNIT_SET = ("bushel", "cup", "dash", "drop", "fl. oz", "g", "gallon", "glass", "kg", "liter", "ml", "ounce", "pinch",
            "pint", "pound", "quart", "scoop", "shot", "tablespoon", "teaspoon")


def _random_sentences(rng, names, k):
    out = []
    for _ in range(k):
        num, den = int(rng.integers(1, 8)), int(rng.choice([1, 2, 3, 4]))
        qty = f"{num}/{den}" if den > 1 else str(num)
        out.append(f"{qty} {UNITS[rng.integers(len(UNITS))]} {names[rng.integers(len(names))]}")
    return out


def _recipe(sentences):
    return Recipe(id="x", title="t", ingredients=list(sentences), instructions=["mix"])


@pytest.mark.acceptance(8, "nutrition pipeline")
def test_nutrition_pipeline(request):
    for sentence, expected in (("2 cups of milk", (2, "cup", "milk")),
                               ("4 teaspoons of honey", (4, "teaspoon", "honey"))):
        p = parse_ingredient(sentence)
        assert (p.quantity, p.unit, p.name) == expected
    p = parse_ingredient("a bunch of cilantro")
    assert p.unit is None and not p.measurable
    assert sorted(UNITS) == sorted(UNIT_SET)

    table = read_nutrient_table()
    names = table.names
    rng = np.random.default_rng(8)
    checked = 0
    for _ in range(1000):
        a = _random_sentences(rng, names, int(rng.integers(1, 6)))
        b = _random_sentences(rng, names, int(rng.integers(1, 6)))
        ra, rb, rab = (compute_nutrition(_recipe(s), table) for s in (a, b, a + b))
        assert all(isinstance(x, NutritionRecord) for x in (ra, rb, rab))
        assert rab.mass == pytest.approx(ra.mass + rb.mass, rel=1e-12)
        for key in rab.totals:
            assert rab.totals[key] == pytest.approx(ra.totals[key] + rb.totals[key], rel=1e-9, abs=1e-12)
        # raising any nutrient never lowers its light
        for key in rab.lights:
            bumped = dict(rab.per100)
            bumped[key] += float(rng.exponential(5.0))
            assert LIGHT_ORDER[traffic_lights(bumped)[key]] >= LIGHT_ORDER[rab.lights[key]]
        # one non-measurable ingredient anywhere makes the recipe incomplete
        pos = int(rng.integers(len(a) + 1))
        odd = NON_MEASURABLE[rng.integers(len(NON_MEASURABLE))].format(names[rng.integers(len(names))])
        out = compute_nutrition(_recipe(a[:pos] + [odd] + a[pos:]), table)
        assert isinstance(out, Incomplete) and out.index == pos
        checked += 1
    detail(request, f"{checked} randomized recipe pairs")


# 9 -------------------------------------------------------------------------

@pytest.mark.acceptance(9, "analogy oracle")
def test_analogy_oracle(request):
    rng = np.random.default_rng(9)
    hits = 0
    for trial in range(100):
        t = additive_space(int(rng.integers(1 << 30)), n_attr=6, n_base=6, d=32, noise=0.05)
        i = int(rng.integers(6))
        j, j2 = (int(x) for x in rng.choice(6, 2, replace=False))
        res = analogy(concept_vector(t, f"combo a{i} b{j}"), concept_vector(t, f"base b{j}"),
                      concept_vector(t, f"base b{j2}"), t, k=1)
        hits += res[0][0] == f"combo{i}{j2}"
    detail(request, f"target at rank 1 in {hits}/100")
    assert hits >= 95

    t = additive_space(99)
    X = t.space("recipe")
    c1, c2 = concept_vector(t, "a1"), concept_vector(t, "b4")
    for x, c in ((1.0, c1), (0.0, c2)):
        got = interpolate(c1, c2, x, t, k=len(t))
        assert got == _neighbours(t, c.vector, "recipe", len(t))
        cos = X @ c.vector / (np.linalg.norm(X, axis=1) * np.linalg.norm(c.vector))
        assert [i for i, _ in got] == [t.ids[k] for k in np.lexsort((np.arange(len(t)), -cos))]


# 10 ------------------------------------------------------------------------

def _pipeline(root):
    syn, model, ev = root / "syn", root / "model", root / "eval"
    assert cli(["gen-synthetic", "--recipes", "150", "--categories", "5", "--seed", "7", "--out", str(syn)]) == 0
    assert cli(["train-joint", "--layer1", str(syn / "layer1.jsonl"), "--layer2", str(syn / "layer2.npy"),
                "--seed", "7", "--d-w", "16", "--d-s", "16", "--d-emb", "32", "--hidden-ingr", "16",
                "--hidden-instr", "16", "--max-epochs", "3,2,3", "--out", str(model)]) == 0
    assert cli(["evaluate", "--model", str(model), "--layer1", str(syn / "layer1.jsonl"),
                "--layer2", str(syn / "layer2.npy"), "--partition", "all", "--n", "100", "--repeats", "10",
                "--seed", "7", "--out", str(ev)]) == 0
    return {p.name: p.read_bytes() for p in sorted(ev.glob("report_*"))}


@pytest.mark.acceptance(10, "determinism")
def test_pipeline_determinism(request, tmp_path):
    first = _pipeline(tmp_path / "a")
    second = _pipeline(tmp_path / "b")
    assert sorted(first) == ["report_im2recipe.json", "report_im2recipe.tsv", "report_recipe2im.json",
                             "report_recipe2im.tsv"]
    assert first == second
    medr = json.loads(first["report_im2recipe.json"])["mean_medr"]
    detail(request, f"{len(first)} report files byte-identical, im2recipe MedR {medr:g}")
