"""Acceptance criteria, one test per criterion.

Each test prints a single ``criterion N PASS|FAIL ...`` line (also repeated in
the pytest terminal summary) and asserts at the stated tolerance.
Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline.
"""

import math
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, all_sign_vectors, random_instance
from dlfh.cli import main
from dlfh.data import FeatureMatrix, SplitSpec, make_split, synth_crossmodal
from dlfh.model import (Hyperparams, closed_form_update, grad_u_col, grad_v_col,
                        hess_bound_coeff, log_likelihood, surrogate_value)
from dlfh.oos import fit_kernel, fit_linear, hash_kernel, hash_linear
from dlfh.pipeline import bench, doubling_ratios, evaluate_tasks, run_experiment
from dlfh.retrieval import GroundTruth, mean_average_precision, pack, average_precision
from dlfh.similarity import DenseSimilarity
from dlfh.trainer import TrainConfig, train


def report(num, title, ok, detail):
    line = f"criterion {num} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    print("\n" + line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def _labels(n, classes, seed):
    return synth_crossmodal(n, 1, 1, classes=classes, seed=seed)[2]


def _column_objective(U, V, S, lam, k, col, side):
    U, V = U.astype(np.float64), V.astype(np.float64)
    if side == "u":
        U[:, k] = col
    else:
        V[:, k] = col
    return log_likelihood(U, V, S, lam)


# ---------------------------------------------------------------- 1


def test_criterion_1_full_mode_monotone():
    t0 = time.perf_counter()
    L = _labels(500, 2, seed=0)
    S = DenseSimilarity((L.values @ L.values.T > 0).astype(np.int8))
    worst = math.inf
    for c in (16, 32):
        state = train(S, TrainConfig(Hyperparams(lam=8.0, code_len=c, max_iter=30, seed=c),
                                     mode="full"))
        obj = [v for _, v in state.objective_trace]
        assert len(obj) == 31
        worst = min(worst, min((b - a) + 1e-9 * abs(a) for a, b in zip(obj, obj[1:])))
    elapsed = time.perf_counter() - t0
    report(1, "full-mode objective never decreases", worst >= 0 and elapsed < 60,
           f"min slack {worst:.3g} (>= 0), {elapsed:.1f}s (< 60s)")


# ---------------------------------------------------------------- 2


def test_criterion_2_surrogate_lower_bound():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    max_violation, max_anchor_gap = -math.inf, 0.0
    for _ in range(1000):
        n, c = int(rng.integers(1, 11)), int(rng.integers(1, 6))
        lam = float(rng.choice([0.5, 2.0, 8.0, 16.0]))
        U, V, S = random_instance(rng, n, c, density=float(rng.uniform(0.1, 0.9)))
        k, side = int(rng.integers(c)), ("u", "v")[int(rng.integers(2))]
        grad = (grad_u_col if side == "u" else grad_v_col)(k, U, V, S, lam)
        h = hess_bound_coeff(n, lam, c)
        base = log_likelihood(U, V, S, lam)
        anchor = (U if side == "u" else V)[:, k]
        max_anchor_gap = max(max_anchor_gap, abs(surrogate_value(anchor, anchor, grad, h, base) - base))
        for cand in rng.choice([-1, 1], size=(10, n)):
            gap = surrogate_value(cand, anchor, grad, h, base) - \
                _column_objective(U, V, S, lam, k, cand, side)
            max_violation = max(max_violation, gap / max(1.0, abs(base)))
    elapsed = time.perf_counter() - t0
    ok = max_violation <= 1e-12 and max_anchor_gap <= 1e-12 and elapsed < 10
    report(2, "surrogate is a tight lower bound", ok,
           f"max relative excess {max_violation:.2e}, anchor gap {max_anchor_gap:.1e}, "
           f"{elapsed:.1f}s (< 10s)")


# ---------------------------------------------------------------- 3


def test_criterion_3_closed_form_is_exhaustive_argmax():
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    mismatches = 0
    cands = {n: all_sign_vectors(n).astype(np.float64) for n in range(1, 13)}
    for _ in range(200):
        n, c = int(rng.integers(1, 13)), int(rng.integers(1, 6))
        lam = float(rng.choice([1.0, 8.0, 32.0]))
        U, V, S = random_instance(rng, n, c)
        k = int(rng.integers(c))
        grad = grad_u_col(k, U, V, S, lam)
        h = hess_bound_coeff(n, lam, c)
        anchor = U[:, k].astype(np.float64)
        X = cands[n]
        d = X - anchor
        vals = d @ grad + 0.5 * h * np.einsum("ij,ij->i", d, d)
        winners = X[vals == vals.max()]
        best = closed_form_update(grad, h, U[:, k])
        # several maximizers only on exact ties; sign(0) = +1 picks one of them
        if not any(np.array_equal(best, w) for w in winners):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    report(3, "closed-form update equals exhaustive argmax", mismatches == 0 and elapsed < 30,
           f"{mismatches}/200 mismatches, {elapsed:.1f}s (< 30s)")


# ---------------------------------------------------------------- 4


def test_criterion_4_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    worst = 0.0
    points = 0
    h = 1e-5
    while points < 24:
        n, c = int(rng.integers(2, 21)), int(rng.integers(1, 9))
        lam = float(rng.uniform(0.5, 16.0))
        U, V = rng.normal(size=(n, c)), rng.normal(size=(n, c))
        S = (rng.random((n, n)) < 0.4).astype(np.int8)
        k = int(rng.integers(c))
        for side, fn, M in (("u", grad_u_col, U), ("v", grad_v_col, V)):
            fd = np.empty(n)
            for i in range(n):
                orig = M[i, k]
                M[i, k] = orig + h
                up = log_likelihood(U, V, S, lam)
                M[i, k] = orig - h
                down = log_likelihood(U, V, S, lam)
                M[i, k] = orig
                fd[i] = (up - down) / (2 * h)
            g = fn(k, U, V, S, lam)
            worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-300))
        points += 1
    report(4, "analytic gradients match central differences", worst < 1e-5,
           f"{points} points, max relative error {worst:.2e} (< 1e-5)")


# ---------------------------------------------------------------- 5


def _protocol_5000(seed=5):
    X, Y, L = synth_crossmodal(5000, 64, 32, classes=10, noise=1.0, seed=seed)
    q, r = make_split(5000, SplitSpec(2000, seed=seed))
    return (X[r], Y[r], L.values[r]), (X[q], Y[q], L.values[q])


def test_criterion_5_stochastic_matches_full():
    t0 = time.perf_counter()
    (Xd, Yd, Ld), (Xq, Yq, Lq) = _protocol_5000()
    maps = {}
    for mode in ("full", "stochastic"):
        hp = Hyperparams(lam=8.0, code_len=16, max_iter=30, sample_size=16, seed=0)
        res = run_experiment(Xd, Yd, Ld, Xq, Yq, Lq, TrainConfig(hp, mode=mode, trace=False))
        maps[mode] = {t: m.map for t, m in res.maps.items()}
    elapsed = time.perf_counter() - t0
    gaps = {t: abs(maps["full"][t] - maps["stochastic"][t]) for t in ("i2t", "t2i")}
    detail = ", ".join(f"{t}: full {maps['full'][t]:.3f} vs stochastic {maps['stochastic'][t]:.3f}"
                       for t in ("i2t", "t2i"))
    report(5, "stochastic MAP within 0.05 of full", max(gaps.values()) <= 0.05 and elapsed < 300,
           f"{detail}; {elapsed:.0f}s (< 300s)")


# ---------------------------------------------------------------- 6


def test_criterion_6_end_to_end_retrieval():
    X, Y, L = synth_crossmodal(1200, 32, 24, classes=2, noise=0.0, seed=6)
    q, r = make_split(1200, SplitSpec(200, seed=6))
    hp = Hyperparams(lam=8.0, code_len=16, max_iter=30, seed=6)
    res = run_experiment(X[r], Y[r], L.values[r], X[q], Y[q], L.values[q],
                         TrainConfig(hp, trace=False), oos="linear")
    separable = min(m.map for m in res.maps.values())

    # XOR: the learned bit follows the class, so one linear hyperplane cannot
    # separate the query classes but an RBF expansion can
    Xx, _, Lx = synth_crossmodal(1000, 2, 2, classes=2, noise=0.15, seed=7, kind="xor")
    qx, rx = make_split(1000, SplitSpec(300, seed=7))
    truth = GroundTruth(Lx.values[qx], Lx.values[rx])
    Sx = DenseSimilarity((Lx.values[rx] @ Lx.values[rx].T > 0).astype(np.int8))
    U = train(Sx, TrainConfig(Hyperparams(lam=8.0, code_len=16, seed=7), trace=False)).U
    lin = fit_linear(FeatureMatrix(Xx[rx]), U)
    ker = fit_kernel(FeatureMatrix(Xx[rx]), U, anchors=200, seed=7)
    map_lin = mean_average_precision(pack(hash_linear(lin, Xx[qx])), pack(U), truth).map
    map_ker = mean_average_precision(pack(hash_kernel(ker, Xx[qx])), pack(U), truth).map
    ok = separable >= 0.99 and map_ker - map_lin >= 0.15
    report(6, "separable retrieval and kernel advantage", ok,
           f"noise-free MAP i2t {res.maps['i2t'].map:.4f} / t2i {res.maps['t2i'].map:.4f} "
           f"(>= 0.99); XOR kernel {map_ker:.3f} vs linear {map_lin:.3f} (gap >= 0.15)")


# ---------------------------------------------------------------- 7


def test_criterion_7_complexity_scaling():
    sizes = [1000, 2000, 4000]
    rows = bench(sizes, ["stochastic"], Hyperparams(lam=8.0, code_len=16, sample_size=16,
                                                    max_iter=30), repeats=3)
    rows += bench(sizes, ["full"], Hyperparams(lam=8.0, code_len=16, max_iter=3), repeats=3)
    st = doubling_ratios(rows, "stochastic")
    fu = doubling_ratios(rows, "full")
    ok = all(1.5 <= r <= 3.0 for r in st) and all(3.0 <= r <= 6.0 for r in fu)
    fmt = lambda rs: ", ".join(f"{r:.2f}" for r in rs)
    report(7, "wall time per doubling of n", ok,
           f"stochastic [{fmt(st)}] in [1.5, 3.0]; full [{fmt(fu)}] in [3.0, 6.0]")


# ---------------------------------------------------------------- 8


def _naive_map(Q, D, lq, ld):
    aps = []
    for q in range(len(Q)):
        order = sorted(range(len(D)), key=lambda i: (sum(a != b for a, b in zip(Q[q], D[i])), i))
        rel = [any(a and b for a, b in zip(lq[q], ld[i])) for i in order]
        if not any(rel):
            continue
        hits, total = 0, 0.0
        for rank, r in enumerate(rel, 1):
            if r:
                hits += 1
                total += hits / rank
        aps.append(total / hits)
    return sum(aps) / len(aps)


def test_criterion_8_map_oracle():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        nq, nd = int(rng.integers(1, 30)), int(rng.integers(2, 101))
        c, width = int(rng.integers(1, 33)), int(rng.integers(1, 6))
        Q = rng.choice(np.array([-1, 1], dtype=np.int8), size=(nq, c))
        D = rng.choice(np.array([-1, 1], dtype=np.int8), size=(nd, c))
        lq = (rng.random((nq, width)) < 0.4).astype(np.uint8)
        ld = (rng.random((nd, width)) < 0.4).astype(np.uint8)
        lq[0, 0] = ld[0, 0] = 1  # at least one valid query
        got = mean_average_precision(pack(Q), pack(D), GroundTruth(lq, ld)).map
        worst = max(worst, abs(got - _naive_map(Q.tolist(), D.tolist(), lq.tolist(), ld.tolist())))
    hand = average_precision([0, 1, 2], [1, 0, 1]) == 5 / 6
    perfect = average_precision([1, 0, 2], [1, 1, 0]) == 1.0
    report(8, "MAP equals a naive re-implementation", worst <= 1e-12 and hand and perfect,
           f"max |diff| {worst:.1e} over 100 instances (<= 1e-12); AP hand cases "
           f"{'exact' if hand and perfect else 'wrong'}")


# ---------------------------------------------------------------- 9


def test_criterion_9_benchmark_tables_documented_only():
    readme = os.path.join(os.path.dirname(__file__), os.pardir, "README.md")
    with open(readme) as fh:
        text = fh.read()
    ok = "MIRFLICKR-25K" in text and "0.03" in text
    report(9, "published benchmark MAP (external data, not gated)", ok,
           "reproduction guide present in README" if ok else "README lacks the guide")


# ---------------------------------------------------------------- 10


def _cli_pipeline(d, oos):
    p = lambda name: os.path.join(d, name)
    run = lambda *a: main([str(x) for x in a])
    codes = [run("synth", "--n", 600, "--dx", 12, "--dy", 8, "--classes", 4, "--noise", 0.5,
                 "--query-count", 100, "--seed", 10, "--out-dir", d)]
    for mode in ("full", "stochastic"):
        codes.append(run("train", "--labels", p("labels_db.csv"), "--mode", mode, "--seed", 10,
                         "--threads", 1, "--out-u", p(f"u_{mode}.dlfc"),
                         "--out-v", p(f"v_{mode}.dlfc"), "--no-figures"))
    for mod, codes_file in (("x", "u_stochastic.dlfc"), ("y", "v_stochastic.dlfc")):
        codes.append(run("fit-oos", "--features", p(f"{mod}_db.dlfx"), "--codes", p(codes_file),
                         "--modality", mod, "--oos", oos, "--anchors", 80, "--seed", 10,
                         "--threads", 1, "--out", p(f"h{mod}.dlfm")))
        codes.append(run("encode", "--model", p(f"h{mod}.dlfm"), "--features",
                         p(f"{mod}_query.dlfx"), "--threads", 1, "--out", p(f"q{mod}.dlfc")))
    assert codes == [0] * len(codes)
    return sorted(f for f in os.listdir(d) if f.endswith((".dlfc", ".dlfm")))


def test_criterion_10_determinism(tmp_path):
    differing, compared = [], 0
    for oos in ("linear", "kernel"):
        a, b = tmp_path / f"{oos}_a", tmp_path / f"{oos}_b"
        a.mkdir(), b.mkdir()
        files = _cli_pipeline(str(a), oos)
        assert files == _cli_pipeline(str(b), oos)
        for name in files:
            compared += 1
            if (a / name).read_bytes() != (b / name).read_bytes():
                differing.append(f"{oos}/{name}")
    report(10, "identical seeds give byte-identical artifacts", not differing,
           f"{compared} code/model files compared, {len(differing)} differ"
           + (f" ({', '.join(differing)})" if differing else ""))
