"""Acceptance suite: one test per shipping criterion.

Run with ``pytest -v tests/test_acceptance.py`` to get one pass/fail
line per criterion. Each test carries its numeric tolerance and a
wall-clock budget; the heavy retrieval criteria run at full scale
(1,000-image corpora), so the whole file takes several minutes.
"""

from __future__ import annotations

import json
import shutil
import subprocess
import time
from contextlib import redirect_stderr, redirect_stdout
from io import StringIO
from pathlib import Path

import numpy as np
import pytest

from conftest import synth_rgb
from neardup import cli, match_classifier as mc, vector_index as vx
from neardup.errors import NearDupError
from neardup.eval_harness import (
    MethodConfig,
    QueryOutcome,
    aggregate,
    chi_square_2x2,
    run_benchmark,
)
from neardup.feature_io import (
    BINARY_128,
    BINARY_256,
    REAL_128,
    REAL_512,
    QueryRow,
    read_features,
    write_features,
    write_jsonl,
)
from neardup.imaging import encode_png, raster_from_array
from neardup.manipgen import generate_all
from neardup.orb_features import extract_codes, extract_descriptors
from neardup.orb_features.pca import encode_many, fit_pca
from neardup.vector_index import QueryParams


def stamped_source(seed: int):
    """A textured image carrying mirror-symmetric identity anchors.

    Three noise tiles, each symmetric about its vertical center line,
    are stamped onto ordinary synthetic texture. A horizontal flip of
    the whole image reproduces every tile pixel for pixel at the
    mirrored location, so tile keypoints survive mirroring exactly --
    the role locally symmetric structure (window frames, discs, UI
    chrome) plays in reposted screenshots and photos. Tile content is
    seeded per image, which keeps the anchors unique to their source.
    """
    tile, block = 64, 4
    rng = np.random.default_rng(seed ^ 0x5A5A)
    arr = synth_rgb(seed).pixels.astype(np.float64).copy()
    h, w = arr.shape[:2]
    cells = tile // block
    for x0, y0 in [(16, 16), (w - tile - 8, 20), (70, 86)]:
        lum = rng.uniform(30, 225, size=(cells, cells))
        lum = np.kron(lum, np.ones((block, block)))
        lum = (lum + lum[:, ::-1]) / 2.0  # vertical-axis mirror symmetry
        for c, (gain, off) in enumerate(
            zip(rng.uniform(0.9, 1.1, 3), rng.uniform(-10, 10, 3))
        ):
            arr[y0 : y0 + tile, x0 : x0 + tile, c] = np.clip(
                lum * gain + off, 0, 255
            )
    return raster_from_array(arr.astype(np.uint8))


def run_cli(argv: list[str]) -> tuple[int, str, str]:
    out, err = StringIO(), StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        try:
            code = cli.main(argv)
        except SystemExit as exc:
            code = int(exc.code or 0)
    return code, out.getvalue(), err.getvalue()


def test_statistics_fidelity():
    """Frozen reference CI brackets and chi-square p-values reproduce."""
    t0 = time.perf_counter()
    # (hit count at n=221) -> 95% bracket rounded to 2 decimals
    brackets = [
        (191, 0.864, (0.82, 0.91)),
        (195, 0.882, (0.84, 0.92)),
        (123, 0.557, (0.49, 0.62)),
        (208, 0.941, (0.91, 0.97)),
        (139, 0.629, (0.57, 0.69)),
        (187, 0.846, (0.80, 0.89)),
    ]
    for hits, p_ref, want in brackets:
        outcomes = [
            QueryOutcome(f"q{i:03d}", "src", "manip", 1, {10: int(i < hits)})
            for i in range(221)
        ]
        report = aggregate(outcomes)
        assert round(report.recall[10], 3) == p_ref
        lo, hi = report.ci[10]
        assert (round(lo, 2), round(hi, 2)) == want
    assert abs(chi_square_2x2(204, 221, 187, 221).p_value - 0.017) <= 0.002
    assert abs(chi_square_2x2(208, 221, 195, 221).p_value - 0.044) <= 0.002
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0, f"statistics criterion took {elapsed:.2f}s"


def test_knn_exactness():
    """200 random indexes agree exactly with a full-sort oracle."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240)
    kinds = [BINARY_128, BINARY_256, REAL_128, REAL_512]
    for trial in range(200):
        kind = kinds[trial % 4]
        n = int(round(10 ** rng.uniform(0, 4)))
        heavy_ties = trial % 2 == 1
        if kind.code == "binary":
            width = kind.dim // 8
            pool = rng.integers(0, 256, size=(8, width), dtype=np.uint8)
            if heavy_ties:
                feats = pool[rng.integers(0, 8, size=n)]
                q = pool[int(rng.integers(0, 8))]
            else:
                feats = rng.integers(0, 256, size=(n, width), dtype=np.uint8)
                q = rng.integers(0, 256, size=width, dtype=np.uint8)
        else:
            pool = rng.standard_normal((8, kind.dim)).astype(np.float32)
            if heavy_ties:
                feats = pool[rng.integers(0, 8, size=n)]
                q = pool[int(rng.integers(0, 8))]
            else:
                feats = rng.standard_normal((n, kind.dim)).astype(np.float32)
                q = rng.standard_normal(kind.dim).astype(np.float32)
        ix = vx.build([("one", feats)], kind)
        k = int(rng.integers(1, n + 11))
        got = vx.knn_features(ix, q, k)
        if kind.code == "binary":
            d = np.bitwise_count(feats ^ q[None, :]).sum(axis=1).astype(np.float64)
        else:
            diff = feats.astype(np.float64) - q.astype(np.float64)
            d = (diff * diff).sum(axis=1)
        order = np.lexsort((np.arange(n), d))[: min(k, n)]
        want = [(int(i), float(d[i])) for i in order]
        assert got == want, f"trial {trial}: kind={kind} n={n} k={k}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0, f"knn criterion took {elapsed:.1f}s"


def test_binary_distance_equivalence():
    """Popcount Hamming equals the squared difference of unpacked bits."""
    t0 = time.perf_counter()
    # exhaustive over every 8-bit byte pair, through the engine's metric
    all_bytes = np.arange(256, dtype=np.uint8).reshape(-1, 1)
    bits = np.unpackbits(all_bytes, axis=1).astype(np.int64)
    for a in range(256):
        ham = vx.packed_hamming(all_bytes, np.array([a], dtype=np.uint8))
        sq = ((bits - bits[a]) ** 2).sum(axis=1)
        assert np.array_equal(ham, sq)
    # 100,000 random 128-bit pairs
    rng = np.random.default_rng(7)
    a128 = rng.integers(0, 256, size=(100_000, 16), dtype=np.uint8)
    b128 = rng.integers(0, 256, size=(100_000, 16), dtype=np.uint8)
    ham = np.array(
        [vx.packed_hamming(a128[i : i + 1], b128[i])[0] for i in range(100_000)]
    )
    bits_a = np.unpackbits(a128, axis=1).astype(np.int64)
    bits_b = np.unpackbits(b128, axis=1).astype(np.int64)
    sq = ((bits_a - bits_b) ** 2).sum(axis=1)
    assert np.array_equal(ham, sq)
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0, f"distance criterion took {elapsed:.1f}s"


def test_self_retrieval():
    """1,000-image corpora return the queried image at rank 1, both modes."""
    t0 = time.perf_counter()
    n = 1000
    # vote mode over the full local-feature path
    descs = [
        extract_descriptors(synth_rgb(5000 + i), max_n=64) for i in range(n)
    ]
    counts = np.array([d.shape[0] for d in descs])
    assert counts.min() >= 1, "every corpus image must contribute features"
    model = fit_pca(np.vstack(descs[:100]), seed=0)
    codes = [encode_many(d, model) for d in descs]
    ix = vx.build([(f"im{i:04d}", codes[i]) for i in range(n)], BINARY_128)
    params = QueryParams(k=100, n=1)
    vote_hits = sum(
        int(vx.query_votes(ix, codes[i], params).entries[0].image_id == f"im{i:04d}")
        for i in range(n)
    )
    assert vote_hits / n == 1.0, f"vote-mode recall@1 = {vote_hits / n}"
    # distance mode over single-vector images
    rng = np.random.default_rng(11)
    vecs = rng.standard_normal((n, 128)).astype(np.float32)
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    ix2 = vx.build([(f"v{i:04d}", vecs[i : i + 1]) for i in range(n)], REAL_128)
    dist_hits = sum(
        int(
            vx.query_distance(ix2, vecs[i], QueryParams(k=1, n=1))
            .entries[0]
            .image_id
            == f"v{i:04d}"
        )
        for i in range(n)
    )
    assert dist_hits / n == 1.0, f"distance-mode recall@1 = {dist_hits / n}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 600.0, f"self-retrieval criterion took {elapsed:.1f}s"


def test_manipulation_robustness():
    """10 sources x full manipulation suite against 1,000 images.

    Mean recall@10 stays at or above 0.60 overall, and the identity,
    flip, channel-swap, and 80%-resize manipulations are recovered in
    the top 3 for every source. The extreme crops and the strongest
    noise setting carry no individual floor.
    """
    t0 = time.perf_counter()
    sources = [stamped_source(1000 + s) for s in range(10)]
    distractors = [extract_descriptors(synth_rgb(1010 + i)) for i in range(990)]
    model = fit_pca(np.vstack(distractors[:100]), seed=0)
    pairs = [(f"im{s:04d}", extract_codes(r, model)) for s, r in enumerate(sources)]
    pairs += [
        (f"im{i + 10:04d}", encode_many(d, model)) for i, d in enumerate(distractors)
    ]
    ix = vx.build(pairs, BINARY_128)

    rows: list[QueryRow] = []
    feats: dict[tuple[str, str], np.ndarray] = {}
    for s, raster in enumerate(sources):
        sid = f"im{s:04d}"
        rows.append(QueryRow(None, sid, "identity"))
        feats[(sid, "identity")] = pairs[s][1]
        outputs, skips = generate_all(raster, sid, seed=0)
        assert not skips, f"full-size source {sid} skipped {skips}"
        for m in outputs:
            rows.append(QueryRow(None, sid, m.manip.id))
            feats[(sid, m.manip.id)] = extract_codes(m.raster, model)
    assert len(rows) == 230  # 10 sources x (identity + 22 manipulations)

    config = MethodConfig(
        "votes",
        lambda row: feats[(row.source_id, row.manip_id)],
        QueryParams(k=100, n=10),
    )
    report, _ = run_benchmark(ix, rows, config)
    assert report.n_queries == 230
    assert report.recall[10] >= 0.60, f"overall recall@10 = {report.recall[10]:.4f}"
    for manip in ("identity", "flip_h", "gbr", "resize_80"):
        got = report.per_manipulation[manip].recall[3]
        assert got == 1.0, f"{manip} recall@3 = {got:.2f}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 1800.0, f"robustness criterion took {elapsed:.1f}s"


def test_classifier_correctness():
    """Gradient, separable accuracy, exact AUC, and LOOCV all hold."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    # analytic gradient vs central differences
    for _ in range(20):
        z = rng.standard_normal((40, 2))
        targets = rng.integers(0, 2, size=40).astype(np.float64)
        params = rng.standard_normal(3)
        l2 = float(rng.uniform(0.0, 0.5))
        _, grad = mc.loss_and_gradient(params, z, targets, l2)
        numeric = np.empty(3)
        eps = 1e-6
        for j in range(3):
            up, dn = params.copy(), params.copy()
            up[j] += eps
            dn[j] -= eps
            numeric[j] = (
                mc.loss_and_gradient(up, z, targets, l2)[0]
                - mc.loss_and_gradient(dn, z, targets, l2)[0]
            ) / (2 * eps)
        rel = np.linalg.norm(grad - numeric) / max(
            np.linalg.norm(grad), np.linalg.norm(numeric), 1e-12
        )
        assert rel < 1e-5, f"gradient relative error {rel:.2e}"
    # 100% training accuracy on a linearly separable set
    pos = [
        mc.LabeledPair(mc.PairFeatures(float(d), float(s), "votes"), True)
        for d, s in zip(rng.uniform(0, 10, 30), rng.uniform(500, 900, 30))
    ]
    neg = [
        mc.LabeledPair(mc.PairFeatures(float(d), float(s), "votes"), False)
        for d, s in zip(rng.uniform(30, 60, 30), rng.uniform(0, 200, 30))
    ]
    model = mc.train(pos + neg)
    correct = sum(
        int(mc.predict(model, p.features).label == p.label) for p in pos + neg
    )
    assert correct == len(pos + neg)
    # hand-worked four-point ranking: 3 of 4 pairs ordered correctly
    assert mc.auc_of_scores([0.9, 0.6, 0.7, 0.2], [True, True, False, False]) == 0.75
    # leave-one-out on a 20-example set completes and stays in range
    acc = mc.loocv(pos[:10] + neg[:10])
    assert 0.0 <= acc <= 1.0
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"classifier criterion took {elapsed:.1f}s"


def test_format_robustness():
    """Round trips are byte-identical; 10,000 corruptions all fail cleanly."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    binary_images = [
        (
            f"im{i:03d}",
            rng.integers(0, 256, size=(int(rng.integers(0, 20)), 16), dtype=np.uint8),
        )
        for i in range(40)
    ]
    real_images = [
        (f"re{i:03d}", rng.standard_normal((7, 512)).astype(np.float32))
        for i in range(10)
    ]
    blob = write_features(binary_images, BINARY_128)
    kind, loaded = read_features(blob)
    assert write_features(loaded, kind) == blob
    real_blob = write_features(real_images, REAL_512)
    real_kind, real_loaded = read_features(real_blob)
    assert write_features(real_loaded, real_kind) == real_blob
    ix = vx.build(binary_images, BINARY_128)
    index_blob = vx.save(ix)
    assert vx.save(vx.load(index_blob)) == index_blob

    cases = 0
    for target, reader in ((blob, read_features), (index_blob, vx.load)):
        for _ in range(2500):  # truncations
            cut = int(rng.integers(0, len(target)))
            with pytest.raises(NearDupError):
                reader(target[:cut])
            cases += 1
        for _ in range(2500):  # single-byte corruptions
            pos = int(rng.integers(0, len(target)))
            mask = int(rng.integers(1, 256))
            mutated = bytearray(target)
            mutated[pos] ^= mask
            with pytest.raises(NearDupError):
                reader(bytes(mutated))
            cases += 1
    assert cases == 10_000
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0, f"format criterion took {elapsed:.1f}s"


def test_determinism(tmp_path):
    """Two full pipeline runs from seed 0 produce identical reports."""
    reports = []
    for tag in ("first", "second"):
        root = tmp_path / tag
        srcdir = root / "images"
        srcdir.mkdir(parents=True)
        manifest_rows = []
        for i in range(4):
            path = srcdir / f"img{i:02d}.png"
            path.write_bytes(encode_png(synth_rgb(500 + i)))
            manifest_rows.append(
                {
                    "id": f"img{i:02d}",
                    "path": str(path),
                    "platform": "other",
                    "posted_at": f"2024-01-{1 + 7 * i:02d}T00:00:00Z",
                }
            )
        corpus = root / "corpus.jsonl"
        write_jsonl(str(corpus), manifest_rows)
        qdir = root / "queries"
        code, _, err = run_cli(
            ["gen-manips", str(corpus), "--out", str(qdir), "--seed", "0"]
        )
        assert code == 0, err
        feats = root / "corpus.ndf1"
        code, _, err = run_cli(["extract-orb", str(corpus), "--out", str(feats)])
        assert code == 0, err
        index = root / "corpus.ndix"
        code, _, err = run_cli(["build-index", str(feats), "--out", str(index)])
        assert code == 0, err
        rdir = root / "report"
        code, _, err = run_cli(
            [
                "bench",
                str(index),
                str(qdir / "queries.jsonl"),
                "--method",
                "orb",
                "--out",
                str(rdir),
                "--no-figures",
            ]
        )
        assert code == 0, err
        payload = (rdir / "report.json").read_bytes()
        json.loads(payload)  # must be valid JSON as well as stable bytes
        reports.append(payload)
    assert reports[0] == reports[1]


def test_embedding_contract(tmp_path):
    """Embedding-extractor output loads here and drives both query paths."""
    node = shutil.which("node")
    cli_js = Path(__file__).resolve().parent.parent / "frontend" / "dist" / "cli.js"
    if node is None or not cli_js.exists():
        pytest.skip("embedding extractor not built (frontend/dist/cli.js)")

    srcdir = tmp_path / "images"
    srcdir.mkdir()
    rows = []
    for i in range(6):
        path = srcdir / f"img{i:02d}.png"
        path.write_bytes(encode_png(synth_rgb(8300 + i)))
        rows.append(
            {
                "id": f"img{i:02d}",
                "path": str(path),
                "platform": "other",
                "posted_at": f"2024-02-{10 + i:02d}T00:00:00Z",
            }
        )
    corpus = tmp_path / "corpus.jsonl"
    write_jsonl(str(corpus), rows)

    def run_node(*argv):
        done = subprocess.run(
            [node, str(cli_js), *argv],
            capture_output=True,
            text=True,
            timeout=600,
        )
        assert done.returncode == 0, done.stderr
        return done

    vgg_path = tmp_path / "vgg.ndf1"
    run_node("extract-vgg", str(corpus), "--out", str(vgg_path))
    kind, grids = read_features(vgg_path.read_bytes())
    assert kind == REAL_512
    assert [image_id for image_id, _ in grids] == [r["id"] for r in rows]
    for _, feats in grids:
        assert feats.shape == (49, 512)
        assert feats.dtype == np.float32
        norms = np.linalg.norm(feats.astype(np.float64), axis=1)
        assert np.all(np.abs(norms - 1.0) <= 1e-5)

    siam_path = tmp_path / "siam.ndf1"
    run_node("export-siamese", str(corpus), "--out", str(siam_path))
    siam_kind, pooled = read_features(siam_path.read_bytes())
    assert siam_kind == REAL_512
    assert [image_id for image_id, _ in pooled] == [r["id"] for r in rows]
    for _, vec in pooled:
        assert vec.shape == (1, 512)
        assert abs(float(np.linalg.norm(vec.astype(np.float64))) - 1.0) <= 1e-5

    # both ranking paths must accept the loaded features directly
    grid_index = vx.build(grids, REAL_512)
    top = vx.query_votes(grid_index, grids[2][1], QueryParams(k=5, n=3))
    assert top.entries[0].image_id == "img02"

    pooled_index = vx.build(pooled, REAL_512)
    nearest = vx.query_distance(pooled_index, pooled[3][1][0], QueryParams(k=1, n=1))
    assert nearest.entries[0].image_id == "img03"
