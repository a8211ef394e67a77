"""End-to-end train -> fit hash functions -> encode queries -> MAP."""

import time
from dataclasses import dataclass, field

from .data import FeatureMatrix, similarity_from_labels, synth_crossmodal
from .oos import encode, fit_kernel, fit_linear
from .retrieval import GroundTruth, mean_average_precision, pack
from .trainer import TrainConfig, train

TASKS = ("i2t", "t2i")


def evaluate_tasks(qx_codes, qy_codes, db_x_codes, db_y_codes, query_labels, db_labels,
                   top_k=None):
    """MAP for image->text (x queries vs y database) and text->image.

    Any code argument may be ``None`` to skip the task that needs it.
    """
    truth = GroundTruth(query_labels, db_labels)
    out = {}
    if qx_codes is not None and db_y_codes is not None:
        out["i2t"] = mean_average_precision(_packed(qx_codes), _packed(db_y_codes), truth, top_k)
    if qy_codes is not None and db_x_codes is not None:
        out["t2i"] = mean_average_precision(_packed(qy_codes), _packed(db_x_codes), truth, top_k)
    return out


def _packed(codes):
    return codes if hasattr(codes, "words") else pack(codes)


def fit_hash_functions(X, Y, U, V, hyper, oos="linear"):
    if oos == "linear":
        return (fit_linear(FeatureMatrix(X), U, hyper.gamma_x, "x"),
                fit_linear(FeatureMatrix(Y), V, hyper.gamma_y, "y"))
    if oos == "kernel":
        ks = hyper.kernel
        return (fit_kernel(FeatureMatrix(X), U, ks.anchors, ks.bandwidth, hyper.seed, ks.reg, "x"),
                fit_kernel(FeatureMatrix(Y), V, ks.anchors, ks.bandwidth, hyper.seed + 1, ks.reg, "y"))
    raise ValueError(f"unknown out-of-sample method {oos!r}")


@dataclass
class ExperimentResult:
    state: object
    models: tuple
    maps: dict
    train_seconds: float
    extra: dict = field(default_factory=dict)


def run_experiment(X_db, Y_db, labels_db, X_q, Y_q, labels_q, config: TrainConfig,
                   oos="linear", top_k=None):
    """Train on the retrieval set, hash the queries, score both directions.

    The retrieval set doubles as the training set, so its learned codes are
    the database codes.
    """
    S = similarity_from_labels(labels_db, labels_db)
    t0 = time.perf_counter()
    state = train(S, config)
    elapsed = time.perf_counter() - t0
    hx, hy = fit_hash_functions(X_db, Y_db, state.U, state.V, config.hyper, oos)
    maps = evaluate_tasks(encode(hx, X_q), encode(hy, Y_q), state.U, state.V,
                          labels_q, labels_db, top_k)
    return ExperimentResult(state, (hx, hy), maps, elapsed)


def bench(sizes, modes, hyper, repeats=3, classes=10, seed=0, threads=1):
    """Training wall time per (mode, n); the best of ``repeats`` runs.

    Only the training call is timed.  Labels come from the synthetic
    generator, so no feature data is involved.
    """
    rows = []
    for mode in modes:
        for n in sizes:
            _, _, labels = synth_crossmodal(n, 1, 1, classes=classes, seed=seed + n)
            S = similarity_from_labels(labels, labels)
            config = TrainConfig(hyper, mode=mode, trace=False, threads=threads)
            best = float("inf")
            for _ in range(repeats):
                t0 = time.perf_counter()
                train(S, config)
                best = min(best, time.perf_counter() - t0)
            rows.append({"mode": str(config.mode.value), "n": n, "seconds": best})
    return rows


def doubling_ratios(rows, mode):
    pts = sorted((r["n"], r["seconds"]) for r in rows if r["mode"] == mode)
    return [b[1] / a[1] for a, b in zip(pts, pts[1:])]
