import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recipe_embed.analysis import (
    EmbeddingTable,
    analogy,
    concept_vector,
    interpolate,
    neighbours_tsv,
    top_unit_activations,
)
from recipe_embed.errors import DegenerateInputError, DimensionError, NotFoundError


def additive_space(seed, n_attr=6, n_base=6, d=32, noise=0.01):
    """Pure attribute items, pure base items and every 'combo' item embedded as attr + base."""
    rng = np.random.default_rng(seed)
    va, vb = rng.normal(size=(n_attr, d)), rng.normal(size=(n_base, d))
    ids, titles, X = [], [], []
    for i in range(n_attr):
        ids.append(f"attr{i}"), titles.append(f"attr a{i}"), X.append(va[i])
    for j in range(n_base):
        ids.append(f"base{j}"), titles.append(f"base b{j}"), X.append(vb[j])
    for i in range(n_attr):
        for j in range(n_base):
            ids.append(f"combo{i}{j}")
            titles.append(f"combo a{i} b{j}")
            X.append(va[i] + vb[j] + rng.normal(scale=noise, size=d))
    X = np.array(X) + rng.normal(scale=noise, size=(len(X), d))
    return EmbeddingTable(ids, titles, X)


def test_single_member_concept():
    t = EmbeddingTable(["x", "y"], ["Chicken Pizza", "salad"], np.array([[1.0, 2.0], [3.0, 4.0]]))
    c = concept_vector(t, "chicken")
    assert c.members == ["x"] and np.array_equal(c.vector, [1.0, 2.0])


def test_antipodal_is_degenerate():
    t = EmbeddingTable(["x", "y"], ["pie one", "pie two"], np.array([[1.0, 2.0], [-1.0, -2.0]]))
    c = concept_vector(t, "PIE")
    assert c.degenerate and np.all(c.vector == 0)


def test_no_match():
    t = EmbeddingTable(["x"], ["soup"], np.ones((1, 2)))
    with pytest.raises(NotFoundError):
        concept_vector(t, "cake")


@given(st.integers(0, 1000))
def test_membership_equals_rescan(seed):
    rng = np.random.default_rng(seed)
    words = ["apple pie", "pie crust", "apple crumble", "soup", "Apple Soup"]
    titles = [words[k] for k in rng.integers(0, 5, 12)]
    t = EmbeddingTable([f"i{k:02d}" for k in range(12)], titles, rng.normal(size=(12, 3)))
    if not any("apple" in s.lower() for s in titles):
        return
    c = concept_vector(t, "apple")
    assert c.members == [f"i{k:02d}" for k in range(12) if "apple" in titles[k].lower()]
    rows = [k for k in range(12) if "apple" in titles[k].lower()]
    np.testing.assert_allclose(c.vector, t.space("recipe")[rows].mean(axis=0))


def test_analogy_additive():
    t = additive_space(0)
    # (a1 + b1) - b1 + b2 = a1 + b2
    res = analogy(concept_vector(t, "combo a1 b1"), concept_vector(t, "base b1"), concept_vector(t, "base b2"), t, k=3)
    assert res[0][0] == "combo12"


def test_analogy_excludes_members():
    t = additive_space(1)
    a, b, c = concept_vector(t, "combo a0 b0"), concept_vector(t, "base b0"), concept_vector(t, "a2")
    res = analogy(a, b, c, t, k=len(t))
    got = {i for i, _ in res}
    assert not got & (set(a.members) | set(b.members) | set(c.members))


def test_analogy_cancellation():
    t = additive_space(2)
    a, c = concept_vector(t, "a0"), concept_vector(t, "b3")
    res = analogy(a, a, c, t, k=len(t))
    excluded = set(a.members) | set(c.members)
    X = t.space("recipe")
    eligible = [i for i in range(len(t)) if t.ids[i] not in excluded]
    cos = X[eligible] @ c.vector / (np.linalg.norm(X[eligible], axis=1) * np.linalg.norm(c.vector))
    expected = [t.ids[eligible[k]] for k in np.lexsort((eligible, -cos))]
    assert [i for i, _ in res] == expected


def test_analogy_zero():
    t = EmbeddingTable(["x", "y", "z"], ["one", "two", "three"], np.array([[1.0, 0.0], [2.0, 0.0], [1.0, 0.0]]))
    with pytest.raises(DegenerateInputError):
        analogy(concept_vector(t, "one"), concept_vector(t, "two"), concept_vector(t, "three"), t)


def test_k_larger_than_corpus():
    t = additive_space(4, n_attr=2, n_base=2)
    a, b, c = concept_vector(t, "combo a0 b0"), concept_vector(t, "base b0"), concept_vector(t, "base b1")
    res = analogy(a, b, c, t, k=100)
    assert len(res) == len(t) - 3 and sorted(i for i, _ in res) == sorted(set(t.ids) - {"combo00", "base0", "base1"})


class TestInterpolate:
    def test_endpoints(self):
        t = additive_space(5)
        c1, c2 = concept_vector(t, "a1"), concept_vector(t, "b4")
        X = t.space("recipe")
        for x, c in ((1.0, c1), (0.0, c2)):
            cos = X @ c.vector / (np.linalg.norm(X, axis=1) * np.linalg.norm(c.vector))
            expected = [t.ids[k] for k in np.lexsort((np.arange(len(t)), -cos))]
            assert [i for i, _ in interpolate(c1, c2, x, t, k=len(t))] == expected

    def test_midpoint_tie_by_id(self):
        t = EmbeddingTable(["p", "q", "r"], ["one", "two", "zzz"], np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]))
        res = interpolate(concept_vector(t, "one"), concept_vector(t, "two"), 0.5, t, k=3)
        assert [i for i, _ in res] == ["p", "q", "r"] and res[0][1] == res[1][1]

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 1), st.integers(0, 50))
    def test_swap_symmetry(self, x, seed):
        t = additive_space(seed, n_attr=3, n_base=3, d=4)
        c1, c2 = concept_vector(t, "a0"), concept_vector(t, "b2")
        a = interpolate(c1, c2, x, t, k=len(t))
        b = interpolate(c2, c1, 1 - x, t, k=len(t))
        assert a == b

    @given(st.floats(0.1, 10), st.floats(0, 1))
    def test_scale_invariance(self, s, x):
        t = additive_space(7, n_attr=3, n_base=3, d=5)
        t2 = t.scaled(s)
        a = interpolate(concept_vector(t, "a1"), concept_vector(t, "b0"), x, t, k=len(t))
        b = interpolate(concept_vector(t2, "a1"), concept_vector(t2, "b0"), x, t2, k=len(t))
        assert [i for i, _ in a] == [i for i, _ in b]

    def test_bad_x(self):
        t = additive_space(8)
        with pytest.raises(Exception):
            interpolate(concept_vector(t, "a1"), concept_vector(t, "a2"), 1.5, t)


class TestTopUnits:
    def test_one_hot(self):
        t = EmbeddingTable(["a", "b", "c"], ["x", "y", "z"], np.eye(3), np.eye(3)[::-1])
        out = top_unit_activations(t, 1, k=1)
        assert out[0]["id"] == "b" and out[0]["image"] == 1.0

    def test_sort_oracle(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(20, 4))
        ids = [f"i{k:02d}" for k in range(20)]
        t = EmbeddingTable(ids, ids, X)
        out = top_unit_activations(t, 2, k=20)
        assert [o["id"] for o in out] == [ids[k] for k in sorted(range(20), key=lambda k: (-X[k, 2], k))]

    def test_k0_and_range(self):
        t = EmbeddingTable(["a"], ["x"], np.ones((1, 2)))
        assert top_unit_activations(t, 0, k=0) == []
        with pytest.raises(DimensionError):
            top_unit_activations(t, 2)


def test_tsv():
    t = EmbeddingTable(["a", "b"], ["Pie", "Soup"], np.array([[1.0, 0.0], [0.0, 1.0]]))
    out = neighbours_tsv("pie", interpolate(concept_vector(t, "pie"), concept_vector(t, "soup"), 1.0, t, k=2), t)
    assert out.splitlines()[0] == "pie\t1\ta\tPie\t1.0"
