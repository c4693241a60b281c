"""Command-line driver for the full near-duplicate retrieval pipeline.

Every subcommand is a thin composition of library calls: generate
benchmark manipulations, extract features, fit the projection, build and
query indexes, run benchmarks (figures included), train and apply the
match classifier, and summarize posting lags. Machine-readable results
go to stdout, diagnostics to stderr. Exit codes: 0 success, 1 usage
error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import (
    eval_harness,
    feature_io,
    figures,
    manipgen,
    match_classifier,
    orb_features,
    phash as phash_mod,
    vector_index,
)
from .errors import KindMismatch, NearDupError
from .imaging import Raster, decode, encode_png

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; this artifact reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _eprint(*args) -> None:
    print(*args, file=sys.stderr)


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def _read_image(path: str) -> Raster:
    with open(path, "rb") as fh:
        return decode(fh.read())


def _resolve(base_file: str, path: str) -> str:
    """Resolve a manifest-relative path against the manifest's directory."""
    if os.path.isabs(path):
        return path
    return os.path.join(os.path.dirname(os.path.abspath(base_file)), path)


def _map_jobs(fn, items, jobs):
    """Ordered map; worker count never changes outputs, only wall time."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _report_issues(issues, what: str) -> None:
    for issue in issues:
        _eprint(f"warning: {what} line {issue.line}: {issue.reason}")


def _load_corpus(path: str):
    rows, issues = feature_io.read_manifest_file(path, feature_io.read_corpus_manifest)
    _report_issues(issues, f"corpus manifest {path}")
    return rows


# --- featurization shared by query / bench / classify -------------------


def _image_featurizer(ix: vector_index.FlatIndex, args):
    """Build featurize(path) -> array matching the index's feature kind."""
    kind = ix.kind
    model = None
    if args.pca:
        model = orb_features.load_pca_file(args.pca)
    if kind.code == "binary" and kind.dim == 256:
        extract = lambda r: orb_features.extract_descriptors(r, args.max_features)
    elif kind.code == "binary" and kind.dim == 128:
        if model is None:
            raise KindMismatch(
                "this index holds 128-bit codes; --pca <model.ndpc> is required"
            )
        extract = lambda r: orb_features.extract_codes(r, model, args.max_features)
    elif kind.code == "real" and kind.dim == 128:
        if model is None:
            raise KindMismatch(
                "this index holds 128-dim projections; --pca <model.ndpc> is required"
            )
        extract = lambda r: orb_features.extract_real(r, model, args.max_features)
    else:
        raise KindMismatch(
            f"images cannot be featurized for a {kind.code}-{kind.dim} index; "
            "query with a feature file instead"
        )

    def featurize(path: str):
        return extract(_read_image(path))

    return featurize


def _ranked_to_obj(result: vector_index.RetrievalResult) -> list[dict]:
    return [
        {"image_id": e.image_id, "score": e.score, "rank": e.rank}
        for e in result.entries
    ]


# --- subcommand handlers -------------------------------------------------


def cmd_gen_manips(args) -> int:
    if os.path.isdir(args.source):
        entries = []
        for name in sorted(os.listdir(args.source)):
            if name.lower().endswith(IMAGE_SUFFIXES):
                entries.append((os.path.splitext(name)[0], os.path.join(args.source, name)))
    else:
        rows = _load_corpus(args.source)
        entries = [(row.id, _resolve(args.source, row.path)) for row in rows]
    seen = set()
    for source_id, _ in entries:
        if source_id in seen:
            raise feature_io.DuplicateImageId(f"duplicate source id {source_id!r}")
        seen.add(source_id)
    if not entries:
        raise feature_io.NoValidRows(f"no images found in {args.source}")

    os.makedirs(args.out, exist_ok=True)
    manifest_rows = []
    n_images = n_skips = 0
    for source_id, path in entries:
        raster = _read_image(path)
        produced, skips = manipgen.generate_all(raster, source_id, seed=args.seed)
        outputs = [("identity", raster)] + [(m.manip.id, m.raster) for m in produced]
        for manip_id, out_raster in outputs:
            name = f"{source_id}__{manip_id}.png"
            with open(os.path.join(args.out, name), "wb") as fh:
                fh.write(encode_png(out_raster))
            manifest_rows.append(
                {"query_path": name, "source_id": source_id, "manip_id": manip_id}
            )
            n_images += 1
        for skip in skips:
            manifest_rows.append(
                {
                    "source_id": source_id,
                    "manip_id": skip.manip_id,
                    "skipped": True,
                    "reason": skip.reason,
                }
            )
            n_skips += 1
    manifest_path = os.path.join(args.out, "queries.jsonl")
    feature_io.write_jsonl(manifest_path, manifest_rows)
    _emit(
        {
            "version": 1,
            "sources": len(entries),
            "queries": n_images,
            "skipped": n_skips,
            "manifest": manifest_path,
        }
    )
    return 0


def cmd_extract_orb(args) -> int:
    rows = _load_corpus(args.manifest)
    model = orb_features.load_pca_file(args.pca) if args.pca else None
    if args.orb_code == "float" and model is None:
        args._sp.error("--orb-code float requires --pca")

    def one(row):
        raster = _read_image(_resolve(args.manifest, row.path))
        t0 = time.perf_counter()
        descs = orb_features.extract_descriptors(raster, args.max_features)
        if model is None:
            feats = descs
        elif args.orb_code == "bits":
            feats = orb_features.encode_many(descs, model)
        else:
            feats = orb_features.project_real(descs, model)
        if args.timing:
            _eprint(f"{row.id}: extract {time.perf_counter() - t0:.3f}s")
        return row.id, feats

    images = _map_jobs(one, rows, args.jobs)
    if model is None:
        kind = feature_io.BINARY_256
    elif args.orb_code == "bits":
        kind = feature_io.BINARY_128
    else:
        kind = feature_io.REAL_128
    feature_io.save_features(args.out, images, kind)
    total = int(sum(f.shape[0] for _, f in images))
    _emit(
        {
            "version": 1,
            "images": len(images),
            "features": total,
            "kind": kind.code,
            "dim": kind.dim,
            "out": args.out,
        }
    )
    return 0


def cmd_fit_pca(args) -> int:
    kind, images = feature_io.load_features(args.features)
    if kind != feature_io.BINARY_256:
        raise KindMismatch(
            f"projection fits on raw 256-bit descriptors, got {kind.code}-{kind.dim}"
        )
    stacked = (
        np.vstack([f for _, f in images if f.shape[0]])
        if any(f.shape[0] for _, f in images)
        else np.zeros((0, 32), dtype=np.uint8)
    )
    model = orb_features.fit_pca(stacked, seed=args.seed, max_sample=args.max_sample)
    orb_features.save_pca_file(model, args.out)
    _emit({"version": 1, "trained_on": model.trained_on, "out": args.out})
    return 0


def cmd_build_index(args) -> int:
    kind, images = feature_io.load_features(args.features)
    ix = vector_index.build(images, kind)
    vector_index.save_file(args.out, ix)
    _emit(
        {
            "version": 1,
            "images": len(ix.image_ids),
            "features": int(ix.features.shape[0]),
            "kind": kind.code,
            "dim": kind.dim,
            "out": args.out,
        }
    )
    return 0


def _run_query(ix, qset, args):
    params = vector_index.QueryParams(k=args.k, n=args.n)
    if args.mode == "votes":
        return vector_index.query_votes(ix, qset, params)
    return vector_index.query_distance(ix, qset, params)


def cmd_query(args) -> int:
    ix = vector_index.load_file(args.index)
    queries = []
    if args.query.endswith(".ndf1"):
        kind, images = feature_io.load_features(args.query)
        if kind != ix.kind:
            raise KindMismatch(
                f"feature file is {kind.code}-{kind.dim}, index is "
                f"{ix.kind.code}-{ix.kind.dim}"
            )
        queries = images
    else:
        featurize = _image_featurizer(ix, args)
        t0 = time.perf_counter()
        feats = featurize(args.query)
        if args.timing:
            _eprint(f"extract: {time.perf_counter() - t0:.3f}s")
        stem = os.path.splitext(os.path.basename(args.query))[0]
        queries = [(stem, feats)]

    out = []
    for query_id, feats in queries:
        t0 = time.perf_counter()
        result = _run_query(ix, feats, args)
        if args.timing:
            _eprint(f"{query_id}: search {time.perf_counter() - t0:.3f}s")
        out.append({"query_id": query_id, "results": _ranked_to_obj(result)})
    print(
        json.dumps(
            {"version": 1, "mode": args.mode, "k": args.k, "n": args.n, "queries": out},
            sort_keys=True,
            indent=2,
        )
    )
    return 0


def cmd_bench(args) -> int:
    ix = vector_index.load_file(args.index)
    rows, issues = feature_io.read_manifest_file(
        args.queries, feature_io.read_query_manifest
    )
    _report_issues(issues, f"query manifest {args.queries}")

    if args.method == "orb":
        featurize_path = _image_featurizer(ix, args)

        def featurize(row):
            path = _resolve(args.queries, row.query_path)
            try:
                t0 = time.perf_counter()
                feats = featurize_path(path)
                if args.timing:
                    _eprint(f"{row.query_path}: extract {time.perf_counter() - t0:.3f}s")
                return feats
            except (NearDupError, OSError) as exc:
                _eprint(f"warning: cannot featurize {path}: {exc}")
                return None

    else:
        if not args.features:
            args._sp.error(f"--method {args.method} requires --features <file.ndf1>")
        kind, images = feature_io.load_features(args.features)
        if kind != ix.kind:
            raise KindMismatch(
                f"feature file is {kind.code}-{kind.dim}, index is "
                f"{ix.kind.code}-{ix.kind.dim}"
            )
        table = dict(images)

        def featurize(row):
            return table.get(eval_harness.query_id_of(row))

    config = eval_harness.MethodConfig(
        mode=args.mode,
        featurize=featurize,
        params=vector_index.QueryParams(k=args.k, n=args.n),
    )
    report, _ = eval_harness.run_benchmark(ix, rows, config)
    os.makedirs(args.out, exist_ok=True)
    report_json = eval_harness.report_to_json(report)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        fh.write(report_json)
    with open(os.path.join(args.out, "report.csv"), "w") as fh:
        fh.write(eval_harness.report_to_csv(report))
    if not args.no_figures:
        figures.save_recall_bars(report, os.path.join(args.out, "recall_per_manip.png"))
    for source_id in report.missing_source:
        _eprint(f"warning: query source {source_id!r} is not in the index")
    sys.stdout.write(report_json)
    return 0


def cmd_phash(args) -> int:
    for path in args.images:
        h = phash_mod.phash(_read_image(path))
        print(f"{phash_mod.to_hex(h)}\t{path}")
    return 0


def _pairs_from_rows(rows) -> list[match_classifier.LabeledPair]:
    return [
        match_classifier.LabeledPair(
            features=match_classifier.PairFeatures(
                phash_dist=row.phash_dist,
                retrieval_score=row.retrieval_score,
                mode=row.mode,
            ),
            label=row.label,
        )
        for row in rows
    ]


def cmd_train_matcher(args) -> int:
    rows, issues = feature_io.read_manifest_file(args.pairs, feature_io.read_labeled_pairs)
    _report_issues(issues, f"labeled pairs {args.pairs}")
    data = _pairs_from_rows(rows)
    model = match_classifier.train(data, l2=args.l2)
    with open(args.out, "w") as fh:
        fh.write(match_classifier.model_to_json(model))
    summary = {
        "version": 1,
        "n": len(data),
        "auc": match_classifier.auc(model, data),
        "out": args.out,
    }
    if len(data) >= 3:
        summary["loocv_accuracy"] = match_classifier.loocv(data, l2=args.l2)
    _emit(summary)
    return 0


def cmd_classify(args) -> int:
    ix = vector_index.load_file(args.index)
    model = match_classifier.model_from_json(open(args.model).read())
    rows, issues = feature_io.read_manifest_file(
        args.queries, feature_io.read_query_manifest
    )
    _report_issues(issues, f"query manifest {args.queries}")
    corpus = {row.id: row for row in _load_corpus(args.corpus)}

    featurize_path = _image_featurizer(ix, args)
    params = vector_index.QueryParams(k=args.k, n=args.n)
    out_rows = []
    n_matches = 0
    for row in rows:
        if row.skipped:
            continue
        qpath = _resolve(args.queries, row.query_path)
        query_raster = _read_image(qpath)
        feats = featurize_path(qpath)
        if feats is None or feats.shape[0] == 0:
            _eprint(f"warning: no features for {row.query_path}; skipping")
            continue
        if model.mode == "votes":
            result = vector_index.query_votes(ix, feats, params)
        else:
            result = vector_index.query_distance(ix, feats, params)
        if not result.entries:
            _eprint(f"warning: no results for {row.query_path}; skipping")
            continue
        top = result.entries[0]
        hit = corpus.get(top.image_id)
        if hit is None:
            _eprint(
                f"warning: result {top.image_id!r} missing from corpus manifest; skipping"
            )
            continue
        match_raster = _read_image(_resolve(args.corpus, hit.path))
        dist = phash_mod.hamming64(
            phash_mod.phash(query_raster), phash_mod.phash(match_raster)
        )
        pred = match_classifier.predict(
            model,
            match_classifier.PairFeatures(
                phash_dist=float(dist), retrieval_score=top.score, mode=model.mode
            ),
        )
        n_matches += int(pred.label)
        out_rows.append(
            {
                "query_id": eval_harness.query_id_of(row),
                "result_id": top.image_id,
                "phash_dist": float(dist),
                "retrieval_score": top.score,
                "mode": model.mode,
                "probability": pred.probability,
                "label": pred.label,
            }
        )
    feature_io.write_jsonl(args.out, out_rows)
    _emit(
        {
            "version": 1,
            "queries": len(out_rows),
            "matches": n_matches,
            "out": args.out,
        }
    )
    return 0


def cmd_lag_report(args) -> int:
    rows, issues = feature_io.read_manifest_file(args.labeled, feature_io.read_labeled_pairs)
    _report_issues(issues, f"labeled results {args.labeled}")
    posted = {row.id: row.posted_at for row in _load_corpus(args.corpus)}
    records = []
    n_unmatched = n_missing = 0
    for row in rows:
        if not row.label:
            n_unmatched += 1
            continue
        q, m = posted.get(row.query_id), posted.get(row.result_id)
        if q is None or m is None:
            n_missing += 1
            continue
        records.append(eval_harness.LagRecord.between(row.query_id, q, m))
    if n_missing:
        _eprint(f"warning: {n_missing} matched pairs missing posting times")
    buckets = eval_harness.lag_histogram(records, bucket_weeks=args.bucket_weeks)
    csv_text = eval_harness.lag_to_csv(buckets)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "lag.csv"), "w") as fh:
        fh.write(csv_text)
    if not args.no_figures:
        figures.save_lag_histogram(
            buckets, args.bucket_weeks, os.path.join(args.out, "lag.png")
        )
    sys.stdout.write(csv_text)
    return 0


# --- parser construction --------------------------------------------------


def _add_common_query_opts(sp, with_mode=True):
    sp.add_argument("--k", type=int, default=100, help="neighbours per feature")
    sp.add_argument("--n", type=int, default=10, help="ranked results per query")
    if with_mode:
        sp.add_argument(
            "--mode", choices=feature_io.MODES, default="votes", help="ranking rule"
        )
    sp.add_argument("--pca", help="projection model file (.ndpc)")
    sp.add_argument(
        "--max-features", type=int, default=200, help="keypoint cap per image"
    )
    sp.add_argument("--timing", action="store_true", help="print stage wall times")


def build_parser() -> _Parser:
    parser = _Parser(prog="neardup", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    jobs_default = os.cpu_count() or 1

    sp = sub.add_parser("gen-manips", help="render the manipulation suite per source image")
    sp.add_argument("source", help="image directory or corpus manifest")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--jobs", type=int, default=jobs_default)
    sp.set_defaults(func=cmd_gen_manips)

    sp = sub.add_parser("extract-orb", help="extract local features for a corpus")
    sp.add_argument("manifest", help="corpus manifest (jsonl)")
    sp.add_argument("--out", required=True, help="feature file to write (.ndf1)")
    sp.add_argument("--pca", help="projection model; omit to emit raw descriptors")
    sp.add_argument(
        "--orb-code",
        choices=("bits", "float"),
        default="bits",
        help="code type when --pca is given",
    )
    sp.add_argument("--max-features", type=int, default=200)
    sp.add_argument("--jobs", type=int, default=jobs_default)
    sp.add_argument("--timing", action="store_true")
    sp.set_defaults(func=cmd_extract_orb)

    sp = sub.add_parser("fit-pca", help="fit the 128-component projection")
    sp.add_argument("features", help="raw descriptor file (.ndf1, 256-bit)")
    sp.add_argument("--out", required=True, help="model file to write (.ndpc)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument(
        "--max-sample", type=int, default=orb_features.pca.DEFAULT_MAX_SAMPLE
    )
    sp.set_defaults(func=cmd_fit_pca)

    sp = sub.add_parser("build-index", help="build a flat search index")
    sp.add_argument("features", help="feature file (.ndf1)")
    sp.add_argument("--out", required=True, help="index file to write (.ndix)")
    sp.set_defaults(func=cmd_build_index)

    sp = sub.add_parser("query", help="rank index images for a query")
    sp.add_argument("index", help="index file (.ndix)")
    sp.add_argument("query", help="query image or feature file (.ndf1)")
    _add_common_query_opts(sp)
    sp.set_defaults(func=cmd_query)

    sp = sub.add_parser("bench", help="run a query manifest and write a report")
    sp.add_argument("index", help="index file (.ndix)")
    sp.add_argument("queries", help="query manifest (jsonl)")
    sp.add_argument(
        "--method",
        choices=("orb", "vgg", "siamese"),
        default="orb",
        help="orb extracts from images; vgg/siamese read --features",
    )
    sp.add_argument("--features", help="pre-extracted query features (.ndf1)")
    sp.add_argument("--out", required=True, help="report directory")
    sp.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    _add_common_query_opts(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("phash", help="print perceptual hashes")
    sp.add_argument("images", nargs="+", help="image files")
    sp.set_defaults(func=cmd_phash)

    sp = sub.add_parser("train-matcher", help="train the match classifier")
    sp.add_argument("pairs", help="labeled pairs (jsonl)")
    sp.add_argument("--out", required=True, help="model file to write (.json)")
    sp.add_argument("--l2", type=float, default=match_classifier.DEFAULT_L2)
    sp.set_defaults(func=cmd_train_matcher)

    sp = sub.add_parser("classify", help="label rank-1 results with the classifier")
    sp.add_argument("index", help="index file (.ndix)")
    sp.add_argument("queries", help="query manifest (jsonl)")
    sp.add_argument("--model", required=True, help="classifier model (.json)")
    sp.add_argument("--corpus", required=True, help="corpus manifest (for images/times)")
    sp.add_argument("--out", required=True, help="labeled results to write (.jsonl)")
    _add_common_query_opts(sp, with_mode=False)
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("lag-report", help="bucket posting lags of matched pairs")
    sp.add_argument("labeled", help="classified results (.jsonl)")
    sp.add_argument("corpus", help="corpus manifest with posting times")
    sp.add_argument("--bucket-weeks", type=int, default=3)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--no-figures", action="store_true")
    sp.set_defaults(func=cmd_lag_report)

    for action in sub.choices.values():
        action.set_defaults(_sp=action)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NearDupError as exc:
        _eprint(f"error: {exc}")
        return 2
    except OSError as exc:
        _eprint(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
