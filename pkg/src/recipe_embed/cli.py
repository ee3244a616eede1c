"""Command-line entry point: ``recipe-embed <subcommand> ...``.

Every run writes its fully resolved options as ``config.json`` next to its
outputs. A ``--config`` JSON file overrides flags of the same name.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from recipe_embed.errors import ConfigError, RecipeEmbedError


def _floats(text):
    return tuple(float(x) for x in text.split(","))


def _ints(text):
    return tuple(int(x) for x in text.split(","))


def _out_dir(path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def resolved_config(args):
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())
            if k not in ("func", "config")}


def write_config(args, out):
    """``config.json`` inside a directory output, ``<stem>.config.json`` beside a file output."""
    out = Path(out)
    target = out / "config.json" if out.is_dir() else out.with_name(out.stem + ".config.json")
    _write_json(target, resolved_config(args))


def apply_config_file(args, parser_defaults):
    if not getattr(args, "config", None):
        return args
    try:
        doc = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest not in parser_defaults or dest in ("command", "func", "config"):
            raise ConfigError(f"unknown option {key!r} in {args.config}")
        default = parser_defaults[dest]
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        setattr(args, dest, value)
    return args


# subcommands -------------------------------------------------------------------

def cmd_gen_synthetic(args):
    from recipe_embed.corpus import save_corpus
    from recipe_embed.synthetic import generate_synthetic

    out = _out_dir(args.out)
    corpus = generate_synthetic(args.recipes, args.categories, seed=args.seed, d_img=args.d_img)
    save_corpus(corpus, out / "layer1.jsonl", out / "layer2.npy")
    write_config(args, out)
    print(f"{len(corpus.recipes)} recipes, {len(corpus.images)} images -> {out}")


def cmd_ingest(args):
    from recipe_embed.corpus import Corpus, assign_partitions, corpus_stats, read_layer1, read_layer2, save_corpus

    out = _out_dir(args.out)
    recipes = read_layer1(args.layer1)
    if args.repartition:
        recipes = assign_partitions(recipes, args.ratios, seed=args.seed)
    images = read_layer2(args.layer2) if args.layer2 else []
    corpus = Corpus(recipes, images)
    save_corpus(corpus, out / "layer1.jsonl", out / "layer2.npy" if images else None)
    _write_json(out / "stats.json", corpus_stats(corpus))
    write_config(args, out)
    print(f"{len(corpus.recipes)} recipes, {len(corpus.images)} images -> {out}")


def cmd_dedup(args):
    from recipe_embed.corpus import load_corpus, write_layer2
    from recipe_embed.corpus import dedup_images

    out = _out_dir(args.out)
    corpus = load_corpus(args.layer1, args.layer2)
    partitions = {r.id: r.partition for r in corpus.recipe_list()}
    kept, report = dedup_images(corpus.images, partitions, exact=not args.no_exact,
                                near_threshold=args.near_threshold,
                                cross_partition_threshold=args.cross_threshold)
    write_layer2(out / "layer2.npy", kept)
    _write_json(out / "dedup_report.json", report.to_dict())
    write_config(args, out)
    print(f"kept {len(kept)} of {len(corpus.images)} images")


def cmd_nutrition(args):
    from recipe_embed.corpus import read_layer1
    from recipe_embed.nutrition import Incomplete, compute_nutrition, read_nutrient_table

    table = read_nutrient_table(args.table)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    done = 0
    lines = []
    for r in read_layer1(args.recipes):
        res = compute_nutrition(r, table)
        if isinstance(res, Incomplete):
            lines.append({"id": r.id, "status": "incomplete", "ingredient": res.index, "reason": res.reason})
        else:
            done += 1
            lines.append({"id": r.id, "status": "complete", **res.to_dict()})
    out.write_text("".join(json.dumps(d, sort_keys=True) + "\n" for d in lines))
    write_config(args, out)
    print(f"{done} of {len(lines)} recipes with complete nutrition -> {out}")


def cmd_stats(args):
    from recipe_embed.corpus import corpus_stats, load_corpus

    out = _out_dir(args.out)
    stats = corpus_stats(load_corpus(args.layer1, args.layer2))
    _write_json(out / "stats.json", stats)
    write_config(args, out)
    print(json.dumps(stats["means"], sort_keys=True))


def cmd_categories(args):
    from recipe_embed.corpus import read_layer1
    from recipe_embed.retrieval import build_categories, category_coverage

    out = _out_dir(args.out)
    cats, assignment = build_categories(read_layer1(args.layer1), top_n=args.top_n)
    _write_json(out / "categories.json", {**cats.to_dict(), "assignment": assignment,
                                         "coverage": category_coverage(assignment)})
    write_config(args, out)
    print(f"{len(cats.names) - 1} categories, coverage {category_coverage(assignment):.3f}")


def _training_recipes(path):
    from recipe_embed.corpus import read_layer1

    recipes = read_layer1(path)
    return [r for r in recipes if r.partition == "training"] or recipes


def cmd_train_wordvec(args):
    from recipe_embed.pipeline import VECTORS_FILE, ingredient_tokens
    from recipe_embed.text import train_word_vectors

    out = _out_dir(args.out)
    recipes = _training_recipes(args.layer1)
    wv = train_word_vectors([ingredient_tokens(r) for r in recipes], d_w=args.dim, negatives=args.negatives,
                            epochs=args.epochs, seed=args.seed)
    wv.save(out / VECTORS_FILE)
    write_config(args, out)
    print(f"{len(wv.vocab)} ingredient vectors of size {wv.dim} -> {out / VECTORS_FILE}")


def cmd_train_skip(args):
    from recipe_embed.pipeline import SKIP_FILE
    from recipe_embed.text import train_skip_instructions

    out = _out_dir(args.out)
    recipes = _training_recipes(args.layer1)
    model, report = train_skip_instructions([r.instructions for r in recipes], d_s=args.dim, epochs=args.epochs,
                                            seed=args.seed, predict_previous=args.previous)
    model.save(out / SKIP_FILE)
    _write_json(out / "skip_report.json", {"history": report.history, "pairs": report.n_pairs,
                                           "skipped": report.skipped})
    write_config(args, out)
    print(f"{report.n_pairs} instruction pairs -> {out / SKIP_FILE}")


TRAIN_FIELDS = ("margin", "reg_weight", "positive_prob", "batch_size", "stages", "max_epochs", "patience",
                "optimizer", "lr", "seed", "d_emb", "hidden_ingr", "hidden_instr", "val_pool", "val_repeats")


def cmd_train_joint(args):
    from recipe_embed.corpus import load_corpus
    from recipe_embed.joint import TrainConfig, model_for, train
    from recipe_embed.pipeline import corpus_categories, featurize, fit_text_encoders, load_encoders, save_bundle

    out = _out_dir(args.out)
    corpus = load_corpus(args.layer1, args.layer2)
    if args.encoders:
        enc = load_encoders(args.encoders)
        if enc.ingr_moments is None:
            enc.fit_moments([r for r in corpus.recipe_list() if r.partition == "training"] or corpus.recipe_list())
    else:
        enc = fit_text_encoders(corpus, d_w=args.d_w, d_s=args.d_s, w2v_epochs=args.w2v_epochs,
                                skip_epochs=args.skip_epochs, seed=args.seed)
    assignment, cats = corpus_categories(corpus)
    data = featurize(corpus, enc, assignment)
    config = TrainConfig(**{k: getattr(args, k) for k in TRAIN_FIELDS})
    n_classes = len(cats.names) if cats is not None else None
    model, tlog = train(model_for(data, config, n_classes), data, config)
    save_bundle(out, model, enc, cats)
    (out / "training_log.json").write_text(tlog.to_json() + "\n")
    write_config(args, out)
    print(f"best validation MedR {tlog.best.get('val_medr')} at epoch {tlog.best.get('epoch')} -> {out}")


def _pairs_for(corpus, embedder, partition):
    from recipe_embed.corpus import Corpus

    if partition != "all":
        recipes = [r for r in corpus.recipe_list() if r.partition == partition]
        if not recipes:
            raise ConfigError(f"no recipes in partition {partition!r}")
        keep = {r.id for r in recipes}
        corpus = Corpus(recipes, [im for im in corpus.images if im.recipe_id in keep])
    return embedder.embed_pairs(corpus)


def cmd_evaluate(args):
    from recipe_embed.corpus import load_corpus
    from recipe_embed.pipeline import load_bundle
    from recipe_embed.retrieval import DIRECTIONS, category_matched_pairs, evaluate

    out = _out_dir(args.out)
    embedder, cats = load_bundle(args.model)
    corpus = load_corpus(args.layer1, args.layer2)
    ids, R, V = _pairs_for(corpus, embedder, args.partition)
    if args.category_matched:
        if cats is None:
            raise ConfigError("the model directory has no categories for category-matched sampling")
        titles = {r.id: r.title for r in corpus.recipe_list()}
        keep = set(category_matched_pairs(ids, [cats.assign(titles[i]) for i in ids], args.seed))
        rows = [k for k, i in enumerate(ids) if i in keep]
        ids, R, V = [ids[k] for k in rows], R[rows], V[rows]
    directions = DIRECTIONS if args.direction == "both" else (args.direction,)
    for d in directions:
        rep = evaluate(R, V, args.n, args.repeats, args.seed, d, ids, args.median)
        (out / f"report_{d}.json").write_text(rep.to_json() + "\n")
        (out / f"report_{d}.tsv").write_text(rep.to_tsv())
        recalls = " ".join(f"R@{k}={v:.3f}" for k, v in rep.mean_recall.items())
        print(f"{d}: n={rep.n} repeats={rep.repeats} MedR={rep.mean_medr:.2f} {recalls}")
    write_config(args, out)


def cmd_analyze(args):
    from recipe_embed.analysis import (
        TSV_HEADER,
        EmbeddingTable,
        analogy,
        concept_vector,
        interpolate,
        neighbours_tsv,
        top_unit_activations,
    )
    from recipe_embed.corpus import load_corpus
    from recipe_embed.pipeline import load_bundle

    out = _out_dir(args.out)
    embedder, _ = load_bundle(args.model)
    corpus = load_corpus(args.layer1, args.layer2)
    ids, R, V = _pairs_for(corpus, embedder, args.partition)
    titles = {r.id: r.title for r in corpus.recipe_list()}
    table = EmbeddingTable(ids, [titles[i] for i in ids], R, V)
    lines = [TSV_HEADER]
    for spec in args.analogy:
        parts = spec.split("|")
        if len(parts) != 3:
            raise ConfigError(f"analogy needs 'a|b|c', got {spec!r}")
        a, b, c = (concept_vector(table, p.strip(), args.space) for p in parts)
        lines.append(neighbours_tsv(f"{parts[0]} - {parts[1]} + {parts[2]} [members excluded]", analogy(a, b, c, table, args.k), table))
    for spec in args.interpolate:
        parts = spec.split("|")
        if len(parts) != 2:
            raise ConfigError(f"interpolation needs 'c1|c2', got {spec!r}")
        c1, c2 = (concept_vector(table, p.strip(), args.space) for p in parts)
        for x in np.linspace(0.0, 1.0, args.steps):
            x = float(x)
            lines.append(neighbours_tsv(f"{x:g} * {parts[0]} + {1 - x:g} * {parts[1]}",
                                        interpolate(c1, c2, x, table, args.k), table))
    (out / "neighbours.tsv").write_text("".join(lines))
    if args.units:
        _write_json(out / "units.json", {str(j): top_unit_activations(table, j, args.k, args.space)
                                         for j in args.units})
    write_config(args, out)
    print(f"{len(lines) - 1} neighbour blocks -> {out / 'neighbours.tsv'}")


# parser ----------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="JSON file whose keys override flags")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="recipe-embed", description="Joint recipe/image embeddings.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("gen-synthetic", cmd_gen_synthetic, "write a synthetic aligned corpus")
    sp.add_argument("--recipes", type=int, default=500)
    sp.add_argument("--categories", type=int, default=10)
    sp.add_argument("--d-img", type=int, default=64)
    sp.add_argument("--out", required=True)

    sp = add("ingest", cmd_ingest, "validate Layer 1/2 files and write a normalized corpus")
    sp.add_argument("--layer1", required=True)
    sp.add_argument("--layer2")
    sp.add_argument("--repartition", action="store_true", help="reassign partitions by seeded shuffle")
    sp.add_argument("--ratios", type=_floats, default=(0.7, 0.15, 0.15))
    sp.add_argument("--out", required=True)

    sp = add("dedup", cmd_dedup, "remove exact and near-duplicate images")
    sp.add_argument("--layer1", required=True)
    sp.add_argument("--layer2", required=True)
    sp.add_argument("--near-threshold", type=float, default=0.1)
    sp.add_argument("--cross-threshold", type=float, default=0.1)
    sp.add_argument("--no-exact", action="store_true")
    sp.add_argument("--out", required=True)

    sp = add("nutrition", cmd_nutrition, "nutrient totals and traffic lights per recipe")
    sp.add_argument("--recipes", required=True)
    sp.add_argument("--table", help="nutrient table (default: bundled)")
    sp.add_argument("--out", required=True, help="output JSONL file")

    sp = add("stats", cmd_stats, "corpus statistics")
    sp.add_argument("--layer1", required=True)
    sp.add_argument("--layer2")
    sp.add_argument("--out", required=True)

    sp = add("categories", cmd_categories, "title-derived semantic categories")
    sp.add_argument("--layer1", required=True)
    sp.add_argument("--top-n", type=int, default=2000)
    sp.add_argument("--out", required=True)

    sp = add("train-wordvec", cmd_train_wordvec, "ingredient word vectors")
    sp.add_argument("--layer1", required=True)
    sp.add_argument("--dim", type=int, default=64)
    sp.add_argument("--negatives", type=int, default=5)
    sp.add_argument("--epochs", type=int, default=5)
    sp.add_argument("--out", required=True)

    sp = add("train-skip", cmd_train_skip, "instruction encoder")
    sp.add_argument("--layer1", required=True)
    sp.add_argument("--dim", type=int, default=64)
    sp.add_argument("--epochs", type=int, default=3)
    sp.add_argument("--previous", action="store_true", help="also decode the previous instruction")
    sp.add_argument("--out", required=True)

    sp = add("train-joint", cmd_train_joint, "staged joint embedding training")
    sp.add_argument("--layer1", required=True)
    sp.add_argument("--layer2", required=True)
    sp.add_argument("--encoders", help="directory with vectors.txt and skip.json (trained here if absent)")
    sp.add_argument("--d-w", type=int, default=64)
    sp.add_argument("--d-s", type=int, default=64)
    sp.add_argument("--w2v-epochs", type=int, default=5)
    sp.add_argument("--skip-epochs", type=int, default=3)
    sp.add_argument("--margin", type=float, default=0.1)
    sp.add_argument("--reg-weight", type=float, default=0.02)
    sp.add_argument("--positive-prob", type=float, default=0.2)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--stages", type=_ints, default=(1, 2, 3))
    sp.add_argument("--max-epochs", type=_ints, default=(20, 10, 20))
    sp.add_argument("--patience", type=int, default=3)
    sp.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--d-emb", type=int, default=128)
    sp.add_argument("--hidden-ingr", type=int, default=64)
    sp.add_argument("--hidden-instr", type=int, default=64)
    sp.add_argument("--val-pool", type=int, default=500)
    sp.add_argument("--val-repeats", type=int, default=3)
    sp.add_argument("--out", required=True)

    sp = add("evaluate", cmd_evaluate, "im2recipe / recipe2im retrieval")
    sp.add_argument("--model", required=True, help="directory written by train-joint")
    sp.add_argument("--layer1", required=True)
    sp.add_argument("--layer2", required=True)
    sp.add_argument("--partition", default="test", choices=("training", "validation", "test", "all"))
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--repeats", type=int, default=10)
    sp.add_argument("--direction", default="both", choices=("both", "im2recipe", "recipe2im"))
    sp.add_argument("--median", default="lower", choices=("lower", "mean"))
    sp.add_argument("--category-matched", action="store_true", help="one random pair per category")
    sp.add_argument("--out", required=True)

    sp = add("analyze", cmd_analyze, "concept arithmetic, interpolation and unit activations")
    sp.add_argument("--model", required=True)
    sp.add_argument("--layer1", required=True)
    sp.add_argument("--layer2", required=True)
    sp.add_argument("--partition", default="test", choices=("training", "validation", "test", "all"))
    sp.add_argument("--space", default="recipe", choices=("recipe", "image"))
    sp.add_argument("--analogy", action="append", default=[], help="'a|b|c' for a - b + c")
    sp.add_argument("--interpolate", action="append", default=[], help="'c1|c2'")
    sp.add_argument("--steps", type=int, default=5)
    sp.add_argument("--units", type=int, nargs="*", default=[])
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--out", required=True)
    return p


def _defaults(parser, command):
    for action in parser._subparsers._group_actions:
        sp = action.choices[command]
        return {a.dest: a.default for a in sp._actions if a.dest != "help"}
    return {}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        apply_config_file(args, _defaults(parser, args.command))
        args.func(args)
    except (RecipeEmbedError, OSError, ValueError) as exc:
        print(f"recipe-embed {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
