"""``relana`` command line.

Exit codes: 0 success, 2 validation error, 3 stage failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as rio
from .catalog import (
    INSTACART_SCHEMA,
    DataError,
    Vocabulary,
    build_session_graph,
    ingest_transactions,
    random_walk_pairs,
    sequence_pairs,
)
from .confidence import filter_false_associations
from .cooccur import accumulate_sharded, relatedness
from .embed import EmbeddingPair, SgnsConfig, factorization_weights, train_ldr, train_sgns
from .evalharness import (
    STRATEGIES,
    CartSnapshot,
    evaluate_carts,
    evaluate_classification,
    evaluate_recommendation,
    leave_last_split,
    repeat,
)
from .pipeline import ConfigError, PipelineConfig, ReportError, StageError, emit_report, run_pipeline
from .relations import (
    ProductSet,
    RelationSet,
    analogy_predict,
    conditional_distribution,
    higher_order_by_kl,
    higher_order_by_relatedness,
    kmeans_diffs,
    relation_vector,
)
from .spectral import alignment_score, left_singular_basis, relatedness_matrix

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 2, 3

_logger = logging.getLogger("relana")


class _Invalid(Exception):
    pass


def _need(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise _Invalid(f"file not found: {p}")
    return p


def _dump(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _vocab(path, num_items: int) -> Vocabulary:
    if path is None:
        return Vocabulary([str(i) for i in range(num_items)])
    vocab = rio.read_vocab(_need(path))
    if len(vocab) != num_items:
        raise _Invalid(f"vocabulary has {len(vocab)} items, expected {num_items}")
    return vocab


def _items(vocab: Vocabulary, ids) -> list[int]:
    try:
        return vocab.encode(ids).tolist()
    except KeyError as exc:
        raise _Invalid(f"unknown item {exc.args[0]!r}") from None


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_ingest(a) -> int:
    if a.schema == "instacart":
        schema = dict(INSTACART_SCHEMA)
    else:
        try:
            schema = json.loads(a.schema)
        except json.JSONDecodeError:
            raise _Invalid("--schema must be 'instacart' or a JSON object") from None
    vocab, log = ingest_transactions(_need(a.input), schema, a.min_frequency)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rio.write_vocab(vocab, out / "vocab.tsv")
    rio.write_log(log, out / "log.csv")
    print(f"{len(vocab)} items, {len(log)} records -> {out}")
    return EXIT_OK


def cmd_count(a) -> int:
    log = rio.read_log(_need(a.log))
    if a.split == "leave-last":
        log = leave_last_split(log).train
    if a.mechanism == "sequence":
        stream = sequence_pairs(log, a.window, a.symmetric)
    else:
        stream = random_walk_pairs(build_session_graph(log), a.walk_length, a.walks_per_node, a.p, a.q, a.window, a.seed)
    table = accumulate_sharded(stream, log.num_items, a.convention)
    rio.write_table(table, a.out)
    if a.pairs_out:
        rio.write_pairs(stream, a.pairs_out)
    if a.csv:
        rio.write_table_csv(table, relatedness(table) if table.n else None, a.csv)
    print(f"{len(stream)} pairs ({stream.suppressed} suppressed), n={table.n}, nnz={table.pair_counts.nnz}")
    return EXIT_OK


def cmd_clean(a) -> int:
    if not 0 < a.alpha < 1:
        raise _Invalid("--alpha must lie in (0, 1)")
    table = rio.read_table(_need(a.input))
    clean, reports = filter_false_associations(table, a.alpha, a.kind, a.inversion)
    rio.write_table(clean, a.out)
    if a.report:
        _dump([r.to_json() for r in reports], a.report)
    print(f"dropped {len(reports)} of {table.pair_counts.nnz} pairs")
    return EXIT_OK


def cmd_train(a) -> int:
    table = rio.read_table(_need(a.table))
    if a.method == "sgns":
        cfg = SgnsConfig(d=a.dim, k=a.k, epochs=a.epochs, lr=a.lr, batch_size=a.batch_size, seed=a.seed)
        try:
            cfg.validate()
        except ValueError as exc:
            raise _Invalid(str(exc)) from None
        pair = train_sgns(table, cfg).pair
    else:
        est = relatedness(table, clip_negative=True)
        pair = train_ldr(est, factorization_weights(table, a.k), a.dim, a.iterations, a.seed, a.ldr_method).pair
    rio.write_embeddings(pair.Z, a.out)
    if a.context_out:
        rio.write_embeddings(pair.Zt, a.context_out)
    if a.tsv:
        rio.write_embeddings_tsv(pair.Z, _vocab(a.vocab, table.num_items), a.tsv)
    print(f"{a.method} embeddings {pair.Z.shape} -> {a.out}")
    return EXIT_OK


def cmd_align(a) -> int:
    Z = rio.read_embeddings(_need(a.emb))
    table = rio.read_table(_need(a.table))
    if Z.shape[0] != table.num_items:
        raise _Invalid("embedding and table vocabularies differ")
    X = relatedness_matrix(relatedness(table))
    rank = a.rank or Z.shape[1]
    if not 1 <= rank <= min(Z.shape[1], table.num_items):
        raise _Invalid(f"--rank must lie in [1, {min(Z.shape[1], table.num_items)}]")
    bz, bx = left_singular_basis(Z, rank, "Z"), left_singular_basis(X, rank, "X")
    _dump(
        {
            "rank": rank,
            "score": alignment_score(bz, bx),
            "singular_values_Z": bz.singular_values.tolist(),
            "singular_values_X": bx.singular_values.tolist(),
        },
        a.out,
    )
    return EXIT_OK


def _read_carts(path, vocab: Vocabulary) -> list[CartSnapshot]:
    """Cart CSV ``cart_id,item_id,position``; each cart's last item is its label."""
    rows: dict[str, list[tuple[int, str]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"cart_id", "item_id", "position"} <= set(reader.fieldnames):
            raise _Invalid("cart file needs columns cart_id,item_id,position")
        for row in reader:
            rows.setdefault(row["cart_id"], []).append((int(row["position"]), row["item_id"]))
    carts = []
    for entries in rows.values():
        ids = [i for _, i in sorted(entries)]
        if len(ids) >= 2:
            idx = _items(vocab, ids)
            carts.append(CartSnapshot(np.array(idx[:-1]), idx[-1]))
    if not carts:
        raise _Invalid("no carts with at least two items")
    return carts


def cmd_eval(a) -> int:
    Z = rio.read_embeddings(_need(a.emb))
    Zt = rio.read_embeddings(_need(a.context_emb)) if a.context_emb else Z
    pair = EmbeddingPair(Z, Zt)
    out = {"task": a.task, "k": a.k, "repetitions": a.reps}
    if a.task == "rec":
        if a.log is None:
            raise _Invalid("eval rec needs --log")
        split = leave_last_split(rio.read_log(_need(a.log)))
        rep = repeat(lambda s: evaluate_recommendation(split, pair, a.k, a.candidates, seed=s), a.reps, a.seed)
        out.update(rep.to_json())
    elif a.task == "cls":
        if a.labels is None:
            raise _Invalid("eval cls needs --labels")
        vocab = _vocab(a.vocab, Z.shape[0]) if a.vocab else None
        labels = rio.read_labels(_need(a.labels), vocab)
        if len(labels) != Z.shape[0]:
            raise _Invalid("labels do not cover the embedding rows")
        keep = labels >= 0
        rep = repeat(lambda s: evaluate_classification(Z[keep], labels[keep], seed=s), a.reps, a.seed)
        out.update(rep.to_json())
    else:
        if a.carts is None:
            raise _Invalid("eval cart needs --carts")
        carts = _read_carts(_need(a.carts), _vocab(a.vocab, Z.shape[0]))
        out["strategies"] = {}
        for strategy in STRATEGIES:
            rep = repeat(
                lambda s: evaluate_carts(carts, pair, strategy, a.k, s, candidate_side="Zt", normalize=True),
                a.reps,
                a.seed,
            )
            out["strategies"][strategy] = rep.to_json()
    _dump(out, a.report)
    return EXIT_OK


def _relatedness_source(a):
    if a.table:
        return relatedness(rio.read_table(_need(a.table)))
    if a.emb:
        Z = rio.read_embeddings(_need(a.emb))
        return EmbeddingPair(Z, Z)
    raise _Invalid("give --table or --emb")


def cmd_relations(a) -> int:
    if a.relation == "higher-order":
        table = rio.read_table(_need(a.alpha_table))
        vocab = _vocab(a.vocab, table.num_items)
        pset = ProductSet(tuple(_items(vocab, a.set.split(","))))
        cond = conditional_distribution(pset, table, mode="any-of" if len(pset.items) > 1 else "joint")
        by_r = higher_order_by_relatedness(pset, relatedness(table), cond)
        by_kl = higher_order_by_kl(pset, cond, table)
        order = np.argsort(-by_r.scores, kind="stable")[: a.top]
        _dump(
            {
                "set": vocab.decode(pset.items),
                "conditional_mode": cond.mode,
                "best_by_relatedness": vocab.items[by_r.best],
                "best_by_kl": vocab.items[by_kl.best],
                "scores": [{"item": vocab.items[i], "score": float(by_r.scores[i]), "kl": float(by_kl.scores[i])} for i in order],
            },
            a.out,
        )
    elif a.relation == "analogy":
        source = _relatedness_source(a)
        num = source.num_items if hasattr(source, "num_items") else source.Z.shape[0]
        vocab = _vocab(a.vocab, num)
        pairs = _read_pairs_csv(_need(a.pairs), vocab)
        zr = relation_vector(RelationSet(pairs), source, a.reduce)
        q = _items(vocab, [a.query])[0]
        res = analogy_predict(q, zr, source)
        _dump(
            {
                "query": a.query,
                "relation_pairs": len(pairs),
                "ranking": [{"item": vocab.items[i], "score": float(s)} for i, s in zip(res.ranking[: a.top], res.scores[: a.top])],
                "residual_norm": float(np.linalg.norm(res.residual)),
                "relation_norm": float(np.linalg.norm(zr.z)),
            },
            a.out,
        )
    else:
        Z = rio.read_embeddings(_need(a.emb)) if a.emb else None
        if Z is None:
            raise _Invalid("relations cluster needs --emb")
        vocab = _vocab(a.vocab, Z.shape[0])
        pairs = _read_pairs_csv(_need(a.pairs), vocab)
        if not 1 <= a.k <= len(pairs):
            raise _Invalid("--k must lie in [1, number of pairs]")
        res = kmeans_diffs(pairs, Z, a.k, a.seed)
        _dump(
            {
                "k": a.k,
                "objective": res.objective,
                "assignments": [
                    {"anchor": vocab.items[i], "reco": vocab.items[j], "cluster": int(c)} for (i, j), c in zip(pairs, res.labels)
                ],
            },
            a.out,
        )
    return EXIT_OK


def _read_pairs_csv(path, vocab: Vocabulary) -> list[tuple[int, int]]:
    """Two-column CSV of item ids with a header row."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2 or any(len(r) < 2 for r in rows):
        raise _Invalid(f"{path}: expected a header and two-column rows")
    ids = [(r[0].strip(), r[1].strip()) for r in rows[1:]]
    a = _items(vocab, [x for x, _ in ids])
    b = _items(vocab, [y for _, y in ids])
    return list(zip(a, b))


def cmd_run(a) -> int:
    cfg = PipelineConfig.load(a.config)
    if a.output_dir:
        cfg.output_dir = a.output_dir
    manifest = run_pipeline(cfg, resume=a.resume)
    print(f"run complete: {cfg.output_dir}/manifest.json ({manifest.config_hash[:12]})")
    return EXIT_OK


def cmd_report(a) -> int:
    sections = a.sections.split(",") if a.sections else None
    for path in emit_report(_need(a.manifest), a.format, a.out, sections):
        print(path)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relana", description="Product relatedness, embeddings and diagnostics.")
    p.add_argument("--version", action="version", version=f"relana {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="read a transaction CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--schema", default="instacart", help="'instacart' or a JSON column map")
    s.add_argument("--min-frequency", type=int, default=1)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("count", help="build a co-occurrence table")
    s.add_argument("--log", required=True)
    s.add_argument("--mechanism", choices=("sequence", "graph"), default="sequence")
    s.add_argument("--window", type=int, default=5)
    s.add_argument("--symmetric", action="store_true")
    s.add_argument("--walk-length", type=int, default=20)
    s.add_argument("--walks-per-node", type=int, default=10)
    s.add_argument("--p", type=float, default=1.0)
    s.add_argument("--q", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--convention", choices=("both-roles", "center-only"), default="both-roles")
    s.add_argument("--split", choices=("none", "leave-last"), default="none")
    s.add_argument("--out", required=True)
    s.add_argument("--pairs-out")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_count)

    s = sub.add_parser("clean", help="drop likely false associations")
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.add_argument("--kind", choices=("confidence", "significance"), default="confidence")
    s.add_argument("--inversion", choices=("lower", "upper"), default="lower")
    s.set_defaults(func=cmd_clean)

    s = sub.add_parser("train", help="fit embeddings")
    s.add_argument("--method", choices=("sgns", "ldr"), default="sgns")
    s.add_argument("--table", required=True)
    s.add_argument("--dim", type=int, default=32)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--epochs", type=int, default=5)
    s.add_argument("--lr", type=float, default=0.025)
    s.add_argument("--batch-size", type=int, default=256)
    s.add_argument("--iterations", type=int, default=200)
    s.add_argument("--ldr-method", choices=("gd", "als"), default="gd")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--context-out")
    s.add_argument("--tsv")
    s.add_argument("--vocab")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("align", help="alignment score of embeddings against relatedness")
    s.add_argument("--emb", required=True)
    s.add_argument("--table", required=True)
    s.add_argument("--rank", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("eval", help="downstream evaluation")
    s.add_argument("task", choices=("rec", "cls", "cart"))
    s.add_argument("--emb", required=True)
    s.add_argument("--context-emb")
    s.add_argument("--split", choices=("leave-last",), default="leave-last")
    s.add_argument("--log")
    s.add_argument("--labels")
    s.add_argument("--carts")
    s.add_argument("--vocab")
    s.add_argument("--candidates", choices=("full", "sampled"), default="full")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--reps", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("relations", help="higher-order relations, analogies, relation clusters")
    s.add_argument("relation", choices=("higher-order", "analogy", "cluster"))
    s.add_argument("--set", help="comma-separated item ids")
    s.add_argument("--alpha-table", help="co-occurrence table (.rlnc)")
    s.add_argument("--table")
    s.add_argument("--emb")
    s.add_argument("--pairs")
    s.add_argument("--query")
    s.add_argument("--reduce", choices=("sum", "mean"), default="mean")
    s.add_argument("--vocab")
    s.add_argument("--k", type=int, default=6)
    s.add_argument("--top", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_relations)

    s = sub.add_parser("run", help="run the full pipeline from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--output-dir")
    s.add_argument("--resume", action="store_true")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="render a manifest as json, csv or plots")
    s.add_argument("--manifest", required=True)
    s.add_argument("--format", choices=("json", "csv", "plot"), default="json")
    s.add_argument("--sections")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def _check_relation_args(a) -> None:
    if a.command != "relations":
        return
    need = {"higher-order": ("set", "alpha_table"), "analogy": ("pairs", "query"), "cluster": ("pairs",)}[a.relation]
    missing = [n for n in need if getattr(a, n) is None]
    if missing:
        raise _Invalid(f"relations {a.relation} needs " + ", ".join("--" + m.replace("_", "-") for m in missing))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # usage errors exit 2; --help and --version exit 0
        if exc.code in (0, None):
            raise
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        _check_relation_args(args)
        return args.func(args)
    except (_Invalid, ConfigError, ReportError, DataError, FileNotFoundError) as exc:
        print(f"relana: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except StageError as exc:
        print(f"relana: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except Exception as exc:  # any other failure inside a command
        print(f"relana: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
