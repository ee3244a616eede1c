"""Synthetic aligned corpus with a known latent structure.

Each of K categories has a prototype direction and a set of core
ingredients. A recipe mixes core ingredients of its category with a few
global ones; its image features are the normalized sum of the category
prototype, the visual vectors of its ingredients and a little noise. Perfect
training can therefore drive retrieval to rank 1.
"""

from __future__ import annotations

import numpy as np

from recipe_embed.corpus import Corpus, ImageRecord, Recipe, assign_partitions

DISH_WORDS = ("salad", "soup", "stew", "pie", "curry", "tacos", "pasta", "casserole", "burger", "risotto",
              "pizza", "sandwich", "cake", "muffins", "pancakes", "skewers")
MAIN_WORDS = ("chicken", "beef", "pork", "shrimp", "salmon", "tofu", "lentil", "mushroom", "potato", "spinach",
              "pumpkin", "apple", "banana", "chocolate", "lemon", "tomato")

INGREDIENTS = (
    "olive oil", "butter", "garlic", "onion", "salt", "black pepper", "flour", "sugar", "brown sugar", "egg",
    "milk", "cream", "cheddar cheese", "parmesan", "rice", "carrot", "celery", "bell pepper", "cumin", "paprika",
    "oregano", "basil", "thyme", "cinnamon", "vanilla", "honey", "soy sauce", "ginger", "lime", "cilantro",
    "chickpea", "coconut milk", "yogurt", "walnut", "oat", "corn", "peas", "zucchini", "cabbage", "broccoli",
    "vinegar", "mustard", "baking powder", "chili powder", "bread crumbs", "tortilla", "noodles", "pesto",
    "sour cream", "bacon", "feta", "avocado", "cucumber", "ketchup", "mayonnaise", "water",
)

_UNITS = ("cup", "cups", "tablespoon", "tbsp", "teaspoon", "tsp", "g", "ounce", "pound", "ml", "pinch")
_QTYS = ("1", "2", "3", "1/2", "1/4", "1 1/2", "3/4", "4", "200", "100")
_PREP = ("", "", "", ", chopped", ", diced", ", minced", ", sliced", " (optional)", ", to taste")
_TITLE_ADJ = ("easy", "best", "quick", "homemade", "classic", "simple", "spicy", "creamy", "rustic", "")
_STEPS = (
    "preheat the oven to {n} degrees",
    "heat the {a} in a large pan over medium heat",
    "add the {a} and {b} and stir for {n} minutes",
    "combine {a} with {b} in a bowl",
    "season the {dish} with {a}",
    "whisk the {a} until smooth",
    "fold in the {b} gently",
    "cook the {dish} for {n} minutes",
    "bake until golden, about {n} minutes",
    "serve the {dish} warm with {b}",
    "let the {dish} rest before serving",
)


def _category_names(k, rng):
    names, seen = [], set()
    mains = rng.permutation(len(MAIN_WORDS))
    dishes = rng.permutation(len(DISH_WORDS))
    i = 0
    while len(names) < k:
        name = f"{MAIN_WORDS[mains[i % len(MAIN_WORDS)]]} {DISH_WORDS[dishes[(i + i // len(DISH_WORDS)) % len(DISH_WORDS)]]}"
        if name not in seen:
            seen.add(name)
            names.append(name)
        i += 1
    return names


def _sentence(name, rng):
    q = _QTYS[rng.integers(len(_QTYS))]
    u = _UNITS[rng.integers(len(_UNITS))]
    return f"{q} {u} {name}{_PREP[rng.integers(len(_PREP))]}"


def generate_synthetic(n_recipes=500, n_categories=10, seed=7, d_img=64, core_size=6, n_core=(3, 5),
                       n_extra=(1, 3), images_per_recipe=(1, 3), noise=0.05, ratios=(0.7, 0.15, 0.15)):
    """Build a :class:`Corpus` of ``n_recipes`` recipes in ``n_categories`` latent categories.

    Deterministic in ``seed``. Recipe ids are ``s00000``..; image ids are
    ``<recipe id>_<k>``.
    """
    rng = np.random.default_rng(seed)
    names = _category_names(n_categories, rng)
    pool = np.array(INGREDIENTS)
    cores = [pool[rng.choice(len(pool), core_size, replace=False)] for _ in range(n_categories)]
    prototypes = rng.normal(size=(n_categories, d_img))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)
    visual = rng.normal(size=(len(pool), d_img)) / np.sqrt(d_img)
    index = {name: k for k, name in enumerate(pool)}

    recipes, images = [], []
    for i in range(n_recipes):
        c = int(rng.integers(n_categories))
        main, dish = names[c].split()
        core = list(rng.choice(cores[c], int(rng.integers(n_core[0], n_core[1] + 1)), replace=False))
        others = [x for x in pool if x not in core]
        extra = list(rng.choice(others, int(rng.integers(n_extra[0], n_extra[1] + 1)), replace=False))
        ings = [str(x) for x in rng.permutation(core + extra)]
        adj = _TITLE_ADJ[rng.integers(len(_TITLE_ADJ))]
        if rng.random() < 0.3:
            title = f"{names[c]} with {ings[0]}"
        else:
            title = f"{adj} {names[c]}".strip()
        steps = []
        for _ in range(int(rng.integers(2, 6))):
            a, b = rng.choice(ings, 2, replace=len(ings) < 2)
            tmpl = _STEPS[rng.integers(len(_STEPS))]
            steps.append(tmpl.format(a=a, b=b, n=int(rng.integers(2, 60)), dish=dish))
        rid = f"s{i:05d}"
        recipes.append(Recipe(id=rid, title=title.title(), ingredients=[_sentence(x, rng) for x in ings],
                              instructions=steps))
        base = prototypes[c] + sum(visual[index[x]] for x in ings)
        for k in range(int(rng.integers(images_per_recipe[0], images_per_recipe[1] + 1))):
            f = base + rng.normal(scale=noise, size=d_img)
            images.append(ImageRecord(f"{rid}_{k}", rid, f / np.linalg.norm(f), "site" if k == 0 else "search"))
    recipes = assign_partitions(recipes, ratios, seed=seed)
    return Corpus(recipes, images, d_img=d_img)


def tagged_ingredient_sentences(n=200, seed=0):
    """Tokenized ingredient sentences with per-token 0/1 ingredient-name labels."""
    from recipe_embed.text.vocab import tokenize

    rng = np.random.default_rng(seed)
    out_tokens, out_labels = [], []
    for _ in range(n):
        name = INGREDIENTS[rng.integers(len(INGREDIENTS))]
        q = _QTYS[rng.integers(len(_QTYS))]
        u = _UNITS[rng.integers(len(_UNITS))]
        of = "of " if rng.random() < 0.3 else ""
        pre = ("fresh ", "large ", "")[rng.integers(3)]
        post = _PREP[rng.integers(len(_PREP))]
        head = tokenize(f"{q} {u} {of}{pre}")
        body = tokenize(name)
        tail = tokenize(post)
        out_tokens.append(head + body + tail)
        out_labels.append([0] * len(head) + [1] * len(body) + [0] * len(tail))
    return out_tokens, out_labels
