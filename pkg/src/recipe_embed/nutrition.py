"""Quantity-unit-ingredient parsing, nutrient lookup and FSA traffic lights.

Parsing follows a fixed grammar rather than a statistical tagger::

    [quantity] [unit] ["of"] tail

Only the twenty measurable units below count as units; container words
such as "bunch" or "slice" are recognised and stripped but leave
``unit=None``, which makes the recipe ineligible for nutrition.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Optional

from recipe_embed.errors import ConfigError, ParseError

UNITS = (
    "bushel", "cup", "dash", "drop", "fl. oz", "g", "gallon", "glass", "kg", "liter",
    "ml", "ounce", "pinch", "pint", "pound", "quart", "scoop", "shot", "tablespoon", "teaspoon",
)

_UNIT_ALIASES = {
    "bushel": "bushel", "bushels": "bushel", "bu": "bushel",
    "cup": "cup", "cups": "cup", "c": "cup",
    "dash": "dash", "dashes": "dash",
    "drop": "drop", "drops": "drop",
    "g": "g", "gram": "g", "grams": "g", "gr": "g", "gm": "g", "gms": "g",
    "gallon": "gallon", "gallons": "gallon", "gal": "gallon",
    "glass": "glass", "glasses": "glass",
    "kg": "kg", "kgs": "kg", "kilogram": "kg", "kilograms": "kg", "kilo": "kg", "kilos": "kg",
    "liter": "liter", "liters": "liter", "litre": "liter", "litres": "liter", "l": "liter",
    "ml": "ml", "milliliter": "ml", "milliliters": "ml", "millilitre": "ml", "millilitres": "ml",
    "ounce": "ounce", "ounces": "ounce", "oz": "ounce",
    "pinch": "pinch", "pinches": "pinch",
    "pint": "pint", "pints": "pint", "pt": "pint",
    "pound": "pound", "pounds": "pound", "lb": "pound", "lbs": "pound",
    "quart": "quart", "quarts": "quart", "qt": "quart",
    "scoop": "scoop", "scoops": "scoop",
    "shot": "shot", "shots": "shot",
    "tablespoon": "tablespoon", "tablespoons": "tablespoon", "tbsp": "tablespoon", "tbs": "tablespoon",
    "tbl": "tablespoon", "tbsps": "tablespoon",
    "teaspoon": "teaspoon", "teaspoons": "teaspoon", "tsp": "teaspoon", "tsps": "teaspoon",
}
_FLUID_OUNCE = re.compile(r"^(?:fl\.?\s*oz\.?|fluid\s+ounces?)(?=\s|$|,)", re.I)

NON_MEASURABLE = frozenset({
    "bunch", "slice", "loaf", "clove", "can", "package", "packet", "head", "sprig", "piece", "stick",
    "handful", "jar", "bottle", "bag", "box", "sheet", "strip", "fillet", "stalk", "envelope",
    "container", "carton", "wedge", "block", "rib",
})

# water-equivalent masses; density-aware conversion is out of scope
UNIT_GRAMS = {
    "bushel": 35239.0, "cup": 244.0, "dash": 0.6, "drop": 0.05, "fl. oz": 29.57, "g": 1.0,
    "gallon": 3785.0, "glass": 240.0, "kg": 1000.0, "liter": 1000.0, "ml": 1.0, "ounce": 28.35,
    "pinch": 0.36, "pint": 473.0, "pound": 453.6, "quart": 946.0, "scoop": 60.0, "shot": 44.0,
    "tablespoon": 14.8, "teaspoon": 4.9,
}

NUTRIENTS = ("energy", "protein", "sugar", "fat", "saturates", "salt")

# FSA front-of-pack thresholds per 100 g: (low, high)
FSA_THRESHOLDS = {
    "fat": (3.0, 17.5),
    "saturates": (1.5, 5.0),
    "sugar": (5.0, 22.5),
    "salt": (0.3, 1.5),
}
LIGHT_NUTRIENTS = ("sugar", "fat", "saturates", "salt")

SYNONYMS = {
    "yuca": "cassava", "manioc": "cassava", "mandioca": "cassava",
    "aubergine": "eggplant", "courgette": "zucchini", "coriander": "cilantro",
    "garbanzo bean": "chickpea", "garbanzo": "chickpea", "scallion": "green onion",
    "spring onion": "green onion", "caster sugar": "sugar", "granulated sugar": "sugar",
    "plain flour": "flour", "all purpose flour": "flour", "prawn": "shrimp",
}

_VULGAR = {"½": Fraction(1, 2), "¼": Fraction(1, 4), "¾": Fraction(3, 4), "⅓": Fraction(1, 3),
           "⅔": Fraction(2, 3), "⅛": Fraction(1, 8), "⅜": Fraction(3, 8), "⅝": Fraction(5, 8),
           "⅞": Fraction(7, 8)}
_QTY = re.compile(
    r"^(?:(?P<whole>\d+)\s*(?P<vulgar>[½¼¾⅓⅔⅛⅜⅝⅞])"
    r"|(?P<mixed>\d+)\s+(?P<mnum>\d+)\s*/\s*(?P<mden>\d+)"
    r"|(?P<num>\d+)\s*/\s*(?P<den>\d+)"
    r"|(?P<dec>\d*\.\d+|\d+)"
    r"|(?P<lone>[½¼¾⅓⅔⅛⅜⅝⅞]))"
)
_RANGE_TAIL = re.compile(r"^\s*(?:-|–|to)\s*(?:\d+\s+\d+/\d+|\d+/\d+|\d*\.\d+|\d+)")
_ARTICLE = re.compile(r"^(a|an|one)\b", re.I)


@dataclass(frozen=True)
class ParsedIngredient:
    quantity: Optional[Fraction]
    unit: Optional[str]
    name: str
    raw: str
    container: Optional[str] = None

    @property
    def measurable(self):
        return self.unit is not None and self.quantity is not None and self.quantity > 0


def _read_quantity(text):
    m = _QTY.match(text)
    if m:
        g = m.groupdict()
        if g["whole"] is not None:
            q = int(g["whole"]) + _VULGAR[g["vulgar"]]
        elif g["mixed"] is not None:
            q = int(g["mixed"]) + Fraction(int(g["mnum"]), int(g["mden"])) if int(g["mden"]) else None
        elif g["num"] is not None:
            q = Fraction(int(g["num"]), int(g["den"])) if int(g["den"]) else None
        elif g["dec"] is not None:
            q = Fraction(g["dec"])
        else:
            q = _VULGAR[g["lone"]]
        rest = text[m.end():]
        r = _RANGE_TAIL.match(rest)
        if r:
            rest = rest[r.end():]
        return q, rest, True
    m = _ARTICLE.match(text)
    if m:
        return Fraction(1), text[m.end():], False
    return None, text, False


def _singular(word):
    if len(word) > 4 and word.endswith("ies"):
        return word[:-3] + "y"
    if len(word) > 4 and word.endswith(("ches", "shes", "sses", "xes", "oes")):
        return word[:-2]
    if len(word) > 3 and word.endswith("s") and not word.endswith(("ss", "us", "is")):
        return word[:-1]
    return word


def normalize_unit(token):
    """Map a unit spelling to its canonical singular form, or None."""
    if token == "T":
        return "tablespoon"
    if token == "t":
        return "teaspoon"
    t = token.lower().rstrip(".")
    if _FLUID_OUNCE.match(t):
        return "fl. oz"
    return _UNIT_ALIASES.get(t)


def _clean_tail(text):
    text = re.sub(r"\s+", " ", text).strip()
    text = re.sub(r"^(?:of\s+)", "", text, flags=re.I)
    return text.strip(" ,;:.-()").lower()


def parse_ingredient(sentence):
    """Split an ingredient sentence into quantity, unit and name.

    Returns ``None`` (unparseable) for empty input, a zero quantity, or an
    empty name. Never raises on string input.
    """
    if not isinstance(sentence, str):
        return None
    text = re.sub(r"\s+", " ", sentence).strip()
    if not text:
        return None
    qty, rest, numeric = _read_quantity(text)
    if numeric and qty is None:
        return None
    if qty is not None and qty <= 0:
        return None
    rest = rest.lstrip()
    unit, container = None, None
    fl = _FLUID_OUNCE.match(rest)
    if fl:
        unit, rest = "fl. oz", rest[fl.end():]
    else:
        head = re.match(r"^([A-Za-z]+\.?)(?=[\s,(]|$)", rest)
        if head:
            word = head.group(1)
            u = normalize_unit(word)
            bare = word.lower().rstrip(".")
            # one-letter abbreviations only count right after a number ("2 g", not "g salt")
            if u is not None and (numeric or bare not in ("c", "l", "t", "g")):
                unit, rest = u, rest[head.end():]
            elif _singular(bare) in NON_MEASURABLE:
                container, rest = _singular(bare), rest[head.end():]
    if unit is not None and qty is None:
        qty = Fraction(1)
    name = _clean_tail(rest)
    if not name:
        return None
    return ParsedIngredient(qty, unit, name, sentence, container)


def words_of(text, synonyms=SYNONYMS):
    """Lowercase, singularized word list with multi-word synonyms folded."""
    words = [_singular(w) for w in re.findall(r"[a-z]+", text.lower())]
    joined = " " + " ".join(words) + " "
    for syn in sorted(synonyms, key=lambda s: -len(s)):
        key = " " + " ".join(_singular(w) for w in syn.split()) + " "
        if key in joined:
            joined = joined.replace(key, " " + synonyms[syn] + " ")
    return [_singular(w) for w in joined.split()]


def canonicalize_ingredient(tail, canonical_names, synonyms=SYNONYMS):
    """Longest canonical name whose every word appears in ``tail``; None if none does.

    Ties on word count go to the name appearing earliest in the sentence.
    """
    words = words_of(tail, synonyms)
    position = {}
    for k, w in enumerate(words):
        position.setdefault(w, k)
    best, best_key = None, None
    for name in canonical_names:
        nw = [_singular(w) for w in re.findall(r"[a-z]+", name.lower())]
        if not nw or any(w not in position for w in nw):
            continue
        key = (-len(nw), min(position[w] for w in nw), name)
        if best_key is None or key < best_key:
            best, best_key = name, key
    return best


# nutrient tables -------------------------------------------------------------

@dataclass
class NutrientTable:
    foods: dict = field(default_factory=dict)

    def __contains__(self, name):
        return name in self.foods

    def __getitem__(self, name):
        return self.foods[name]

    @property
    def names(self):
        return list(self.foods)


def read_nutrient_table(path=None, delimiter=None):
    """Delimited text with a header row: name, then per-100 g nutrient columns."""
    if path is None:
        text = resources.files("recipe_embed").joinpath("data/nutrients.csv").read_text()
        locus = "nutrients.csv"
    else:
        with open(path) as fh:
            text = fh.read()
        locus = str(path)
    if delimiter is None:
        delimiter = "\t" if "\t" in text.splitlines()[0] else ","
    rows = list(csv.reader(text.splitlines(), delimiter=delimiter))
    header = [h.strip().lower() for h in rows[0]]
    if header[0] != "name" or not set(NUTRIENTS) <= set(header):
        raise ParseError(f"header must be name plus {NUTRIENTS}", f"{locus}:1")
    cols = {n: header.index(n) for n in NUTRIENTS}
    foods = {}
    for lineno, row in enumerate(rows[1:], 2):
        if not row or not row[0].strip():
            continue
        name = row[0].strip().lower()
        if name in foods:
            raise ParseError(f"duplicate food {name!r}", f"{locus}:{lineno}")
        try:
            vals = {n: float(row[c]) for n, c in cols.items()}
        except (ValueError, IndexError) as exc:
            raise ParseError(f"bad nutrient value: {exc}", f"{locus}:{lineno}") from exc
        if any(v < 0 for v in vals.values()):
            raise ParseError("nutrient values must be >= 0", f"{locus}:{lineno}")
        foods[name] = vals
    return NutrientTable(foods)


# nutrition -----------------------------------------------------------------

@dataclass
class NutritionRecord:
    totals: dict
    mass: float
    per100: dict
    lights: dict
    matched: list = field(default_factory=list)

    def to_dict(self):
        return {"totals": self.totals, "mass": self.mass, "per100": self.per100, "lights": self.lights,
                "matched": self.matched}


@dataclass
class Incomplete:
    index: int
    reason: str


def _ingredient_terms(recipe, k):
    sentence = recipe.ingredients[k]
    parsed = parse_ingredient(sentence)
    units = getattr(recipe, "units", None)
    quantities = getattr(recipe, "quantities", None)
    if units and quantities and units[k] is not None and quantities[k] is not None:
        unit = normalize_unit(str(units[k])) or (str(units[k]) if str(units[k]) in UNITS else None)
        try:
            qty = Fraction(str(quantities[k]))
        except (ValueError, ZeroDivisionError):
            qty = None
        name = parsed.name if parsed is not None else sentence
        return qty, unit, name
    if parsed is None:
        return None, None, None
    return parsed.quantity, parsed.unit, parsed.name


def compute_nutrition(recipe, table, conversions=None, thresholds=None, synonyms=SYNONYMS):
    """Total and per-100 g nutrients, or :class:`Incomplete`.

    Every ingredient needs a positive quantity, a measurable unit and a name
    matching a food in ``table``.
    """
    conversions = UNIT_GRAMS if conversions is None else conversions
    totals = {n: 0.0 for n in NUTRIENTS}
    mass = 0.0
    matched = []
    for k in range(len(recipe.ingredients)):
        qty, unit, name = _ingredient_terms(recipe, k)
        if name is None:
            return Incomplete(k, "unparseable")
        if unit is None or qty is None or qty <= 0:
            return Incomplete(k, "no measurable unit")
        food = canonicalize_ingredient(name, table.names, synonyms)
        if food is None:
            return Incomplete(k, f"no nutrient match for {name!r}")
        if unit not in conversions:
            raise ConfigError(f"no gram conversion for unit {unit!r}")
        grams = float(qty) * conversions[unit]
        for n in NUTRIENTS:
            totals[n] += grams * table[food][n] / 100.0
        mass += grams
        matched.append(food)
    per100 = {n: totals[n] / mass * 100.0 for n in NUTRIENTS}
    return NutritionRecord(totals, mass, per100, traffic_lights(per100, thresholds), matched)


def traffic_lights(per100, thresholds=None):
    """green if value <= low, red if value > high, amber otherwise."""
    thresholds = FSA_THRESHOLDS if thresholds is None else thresholds
    out = {}
    for n in LIGHT_NUTRIENTS:
        low, high = thresholds[n]
        v = per100[n]
        out[n] = "green" if v <= low else ("red" if v > high else "amber")
    return out
