"""``dlfh`` command line: synth -> train -> fit-oos -> encode -> eval, plus bench and sweep.

Every option can also come from a ``key = value`` config file (``--config``);
explicit flags win over the file, the file wins over built-in defaults.
Exit status: 0 success, 2 usage or input error, 3 numerical failure.
"""

import argparse
import logging
import os
import sys
import time

from threadpoolctl import threadpool_limits

from . import data, oos, pipeline, retrieval
from .errors import ContractError, DLFHError, FormatError, LoadError, SingularSystemError
from .model import Hyperparams, KernelSettings
from .trainer import TrainConfig, train

log = logging.getLogger("dlfh")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text):
    return [int(float(t)) for t in str(text).split(",") if t.strip()]


def _float_list(text):
    return [float(t) for t in str(text).split(",") if t.strip()]


def _str_list(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _optional_float(text):
    return None if str(text).lower() in ("auto", "none", "") else float(text)


class _Options:
    """Collects option specs so config-file values can be typed and defaulted."""

    def __init__(self, parser):
        self.parser = parser
        self.specs = {}
        self.aliases = {}

    def add(self, flag, type=str, default=None, help=None, choices=None, dest=None):
        name = flag.lstrip("-").replace("-", "_")
        dest = dest or name
        if name != dest:
            self.aliases[name] = dest
        if type is bool:
            self.parser.add_argument(flag, dest=dest, action="store_const", const=True,
                                     default=None, help=help)
        else:
            self.parser.add_argument(flag, dest=dest, default=None, help=help,
                                     choices=choices, type=type)
        self.specs[dest] = (_bool if type is bool else type, default)


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    if not os.path.isfile(path):
        raise LoadError(f"{path}: no such file")
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def resolve(args, specs, aliases=None):
    """Fill unset options from the config file, then from defaults."""
    file_values = read_config_file(args.config) if args.config else {}
    for alias, dest in (aliases or {}).items():
        if alias in file_values:
            file_values[dest] = file_values.pop(alias)
    resolved = {}
    for dest, (conv, default) in specs.items():
        value = getattr(args, dest)
        if value is None and dest in file_values:
            try:
                value = conv(file_values[dest])
            except ValueError as exc:
                raise FormatError(f"{args.config}: bad value for {dest}: {exc}") from None
        if value is None:
            value = default
        resolved[dest] = value
    unknown = set(file_values) - set(specs)
    if unknown:
        log.warning("ignoring unknown config keys: %s", ", ".join(sorted(unknown)))
    return argparse.Namespace(**resolved)


def config_header(command, cfg):
    lines = [f"# dlfh {command}"]
    for key in sorted(vars(cfg)):
        lines.append(f"# {key} = {getattr(cfg, key)}")
    return "\n".join(lines) + "\n"


def _figure_path(csv_path):
    return os.path.splitext(csv_path)[0] + ".png"


def _hyper(cfg):
    kernel = KernelSettings(
        anchors=getattr(cfg, "anchors", None) or KernelSettings.anchors,
        bandwidth=getattr(cfg, "bandwidth", None),
        reg=getattr(cfg, "kernel_reg", None) or KernelSettings.reg,
    )
    return Hyperparams(
        lam=cfg.lam,
        code_len=getattr(cfg, "bits", 16),
        max_iter=getattr(cfg, "iters", 30),
        sample_size=getattr(cfg, "sample_size", None),
        seed=cfg.seed,
        gamma_x=getattr(cfg, "gamma", 1.0),
        gamma_y=getattr(cfg, "gamma", 1.0),
        kernel=kernel,
    )


# ---------------------------------------------------------------- subcommands

def cmd_synth(cfg):
    X, Y, labels = data.synth_crossmodal(cfg.n, cfg.dx, cfg.dy, cfg.classes, cfg.noise,
                                         cfg.seed, cfg.kind)
    os.makedirs(cfg.out_dir, exist_ok=True)
    query, db = data.make_split(cfg.n, data.SplitSpec(cfg.query_count, cfg.seed))
    ext = "dlfx" if cfg.format == "binary" else "csv"
    parts = [("db", db)] + ([("query", query)] if query.size else [])
    for name, idx in parts:
        data.save_features(os.path.join(cfg.out_dir, f"x_{name}.{ext}"), X[idx], cfg.format)
        data.save_features(os.path.join(cfg.out_dir, f"y_{name}.{ext}"), Y[idx], cfg.format)
        data.save_labels(os.path.join(cfg.out_dir, f"labels_{name}.csv"), labels.values[idx])
    print(f"wrote {len(db)} retrieval and {len(query)} query points to {cfg.out_dir}")
    return EXIT_OK


def cmd_train(cfg):
    labels_x = data.load_labels(cfg.labels)
    labels_y = data.load_labels(cfg.labels_y) if cfg.labels_y else labels_x
    S = data.similarity_from_labels(labels_x, labels_y, cfg.dense_threshold)
    config = TrainConfig(_hyper(cfg), mode=cfg.mode, trace=bool(cfg.trace),
                         objective_eval_stride=cfg.trace_stride,
                         early_stop=bool(cfg.early_stop), threads=cfg.threads)
    t0 = time.perf_counter()
    state = train(S, config)
    elapsed = time.perf_counter() - t0
    retrieval.save_codes(cfg.out_u, state.U)
    retrieval.save_codes(cfg.out_v, state.V)
    if cfg.trace:
        with open(cfg.trace, "w") as fh:
            fh.write(config_header("train", cfg))
            fh.write("iteration,objective\n")
            for t, value in state.objective_trace:
                fh.write(f"{t},{value!r}\n")
        if not cfg.no_figures:
            from .plotting import plot_objective_trace
            plot_objective_trace({f"{cfg.mode}, {cfg.bits} bits": state.objective_trace},
                                 _figure_path(cfg.trace))
    final = state.objective_trace[-1][1] if state.objective_trace else float("nan")
    print(f"iterations={state.iteration} objective={final:.6f} train_seconds={elapsed:.3f}")
    return EXIT_OK


def cmd_fit_oos(cfg):
    X = data.load_features(cfg.features)
    codes = retrieval.unpack(retrieval.load_codes(cfg.codes))
    if cfg.oos == "linear":
        model = oos.fit_linear(X, codes, cfg.gamma, cfg.modality)
    else:
        model = oos.fit_kernel(X, codes, cfg.anchors, cfg.bandwidth, cfg.seed,
                               cfg.kernel_reg, cfg.modality)
    oos.save_model(cfg.out, model)
    print(f"wrote {cfg.oos} model ({model.dim} -> {model.bits} bits) to {cfg.out}")
    return EXIT_OK


def cmd_encode(cfg):
    model = oos.load_model(cfg.model)
    X = data.load_features(cfg.features)
    retrieval.save_codes(cfg.out, oos.encode(model, X.values))
    print(f"wrote {X.shape[0]} codes to {cfg.out}")
    return EXIT_OK


def _load_optional_codes(path):
    return retrieval.load_codes(path) if path else None


def cmd_eval(cfg):
    query_labels = data.load_labels(cfg.query_labels)
    db_labels = data.load_labels(cfg.db_labels)
    codes = {k: _load_optional_codes(getattr(cfg, k)) for k in ("qx", "qy", "dbx", "dby")}
    for key, packed in codes.items():
        if packed is None:
            continue
        want = query_labels.shape[0] if key.startswith("q") else db_labels.shape[0]
        if packed.rows != want:
            raise ContractError(
                f"{getattr(cfg, key)}: {packed.rows} codes but {want} label rows")
    results = pipeline.evaluate_tasks(codes["qx"], codes["qy"], codes["dbx"], codes["dby"],
                                      query_labels, db_labels, cfg.map_at)
    if not results:
        raise ContractError("need --qx with --dby and/or --qy with --dbx")
    bits = next(c for c in codes.values() if c is not None).bits
    lines = ["task,code_len,map,queries_scored,queries_skipped"]
    for task, res in results.items():
        lines.append(f"{task},{bits},{res.map:.6f},{res.scored},{res.skipped}")
    body = "\n".join(lines) + "\n"
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(config_header("eval", cfg))
            fh.write(body)
    sys.stdout.write(body)
    return EXIT_OK


def cmd_bench(cfg):
    rows = pipeline.bench(cfg.sizes, cfg.modes, _hyper(cfg), cfg.repeats, cfg.classes,
                          cfg.seed, cfg.threads)
    lines = ["mode,n,seconds,ratio_to_previous"]
    for mode in cfg.modes:
        prev = None
        for r in (r for r in rows if r["mode"] == mode):
            ratio = "" if prev is None else f"{r['seconds'] / prev:.3f}"
            lines.append(f"{mode},{r['n']},{r['seconds']:.6f},{ratio}")
            prev = r["seconds"]
    body = "\n".join(lines) + "\n"
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(config_header("bench", cfg))
            fh.write(body)
        if not cfg.no_figures:
            from .plotting import plot_bench
            plot_bench(rows, _figure_path(cfg.out))
    else:
        sys.stdout.write(config_header("bench", cfg))
    sys.stdout.write(body)
    return EXIT_OK


def cmd_sweep(cfg):
    d = cfg.data_dir

    def path(stem):
        for ext in ("dlfx", "csv"):
            p = os.path.join(d, f"{stem}.{ext}")
            if os.path.isfile(p):
                return p
        raise LoadError(f"{os.path.join(d, stem)}.dlfx: no such file")

    X_db, Y_db = data.load_matrix(path("x_db")), data.load_matrix(path("y_db"))
    X_q, Y_q = data.load_matrix(path("x_query")), data.load_matrix(path("y_query"))
    L_db = data.load_labels(os.path.join(d, "labels_db.csv"))
    L_q = data.load_labels(os.path.join(d, "labels_query.csv"))
    rows = []
    for value in cfg.values:
        overrides = {"lam": value} if cfg.param == "lambda" else {"sample_size": int(value)}
        hp_cfg = argparse.Namespace(**{**vars(cfg), **overrides})
        config = TrainConfig(_hyper(hp_cfg), mode=cfg.mode, trace=False, threads=cfg.threads)
        res = pipeline.run_experiment(X_db, Y_db, L_db, X_q, Y_q, L_q, config, cfg.oos, cfg.map_at)
        for task, m in res.maps.items():
            rows.append({"value": value, "task": task, "map": m.map})
    lines = [f"{cfg.param},task,map"] + [f"{r['value']!r},{r['task']},{r['map']:.6f}" for r in rows]
    body = "\n".join(lines) + "\n"
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(config_header("sweep", cfg))
            fh.write(body)
        if not cfg.no_figures:
            from .plotting import plot_sweep
            plot_sweep(cfg.param, rows, _figure_path(cfg.out))
    sys.stdout.write(body)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _train_options(o):
    o.add("--bits", int, 16, "code length c")
    o.add("--iters", int, 30, "outer iterations T")
    o.add("--lambda", float, 8.0, "scale factor lambda", dest="lam")
    o.add("--sample-size", int, None, "sampled partners m (stochastic; default: bits)")
    o.add("--mode", str, "stochastic", "training variant", choices=["full", "stochastic"])


def _kernel_options(o):
    o.add("--gamma", float, 1.0, "ridge regularization for linear hash functions")
    o.add("--anchors", int, 500, "kernel anchor points (clamped to n)")
    o.add("--bandwidth", _optional_float, None, "RBF bandwidth or 'auto'")
    o.add("--kernel-reg", float, 1e-3, "l2 strength of the per-bit logistic regressions")


def build_parser():
    parser = argparse.ArgumentParser(prog="dlfh", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    registry = {}

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--log-level", default="WARNING")
        o = _Options(p)
        o.add("--seed", int, 0, "random seed")
        o.add("--threads", int, None, "worker threads (fallback: $DLFH_THREADS, else 1)")
        p.set_defaults(func=func)
        registry[name] = o
        return o

    o = command("synth", cmd_synth, "write a synthetic two-modality dataset")
    o.add("--n", int, 2000, "points")
    o.add("--dx", int, 32, "modality x dimension")
    o.add("--dy", int, 32, "modality y dimension")
    o.add("--classes", int, 2)
    o.add("--noise", float, 0.0)
    o.add("--kind", str, "clusters", choices=["clusters", "xor"])
    o.add("--query-count", int, 0, "points held out as queries")
    o.add("--format", str, "binary", choices=["binary", "csv"])
    o.add("--out-dir", str, ".")

    o = command("train", cmd_train, "learn binary codes U, V from labels")
    o.add("--labels", str, None, "training labels (modality x rows)")
    o.add("--labels-y", str, None, "labels of modality y rows if they differ")
    _train_options(o)
    o.add("--out-u", str, "codes_u.dlfc")
    o.add("--out-v", str, "codes_v.dlfc")
    o.add("--trace", str, None, "write the objective trace CSV here")
    o.add("--trace-stride", int, None, "evaluate the objective every k iterations")
    o.add("--early-stop", bool, False, "stop once the relative improvement is below 1e-6")
    o.add("--dense-threshold", int, data.DENSE_THRESHOLD)
    o.add("--no-figures", bool, False)

    o = command("fit-oos", cmd_fit_oos, "fit out-of-sample hash functions")
    o.add("--features", str, None)
    o.add("--codes", str, None)
    o.add("--modality", str, "x", choices=["x", "y"])
    o.add("--oos", str, "linear", choices=["linear", "kernel"])
    _kernel_options(o)
    o.add("--out", str, "model.dlfm")

    o = command("encode", cmd_encode, "hash features with a fitted model")
    o.add("--model", str, None)
    o.add("--features", str, None)
    o.add("--out", str, "codes.dlfc")

    o = command("eval", cmd_eval, "MAP for image->text and text->image retrieval")
    o.add("--query-labels", str, None)
    o.add("--db-labels", str, None)
    o.add("--qx", str, None, "modality x query codes")
    o.add("--qy", str, None, "modality y query codes")
    o.add("--dbx", str, None, "modality x database codes")
    o.add("--dby", str, None, "modality y database codes")
    o.add("--map-at", int, None, "rank cutoff (default: whole database)")
    o.add("--out", str, None, "CSV report path")

    o = command("bench", cmd_bench, "training time against training-set size")
    o.add("--sizes", _int_list, [1000, 2000, 4000])
    o.add("--modes", _str_list, ["full", "stochastic"])
    _train_options(o)
    o.add("--repeats", int, 3)
    o.add("--classes", int, 10)
    o.add("--out", str, None, "CSV report path (figure written alongside)")
    o.add("--no-figures", bool, False)

    o = command("sweep", cmd_sweep, "MAP against lambda or the sample size")
    o.add("--data-dir", str, ".", "directory written by 'dlfh synth' (or same layout)")
    o.add("--param", str, "lambda", choices=["lambda", "sample-size"])
    o.add("--values", _float_list, [1e-4, 1e-2, 1.0, 4.0, 8.0, 16.0, 32.0])
    _train_options(o)
    o.add("--oos", str, "linear", choices=["linear", "kernel"])
    _kernel_options(o)
    o.add("--map-at", int, None)
    o.add("--out", str, None, "CSV report path (figure written alongside)")
    o.add("--no-figures", bool, False)

    return parser, registry


_REQUIRED = {
    "train": ("labels",),
    "fit-oos": ("features", "codes"),
    "encode": ("model", "features"),
    "eval": ("query_labels", "db_labels"),
}


def main(argv=None):
    parser, registry = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = registry[args.command]
        cfg = resolve(args, opts.specs, opts.aliases)
        if cfg.threads is None:
            cfg.threads = int(os.environ.get("DLFH_THREADS", "1"))
        missing = [k for k in _REQUIRED.get(args.command, ()) if getattr(cfg, k) is None]
        if missing:
            parser.error(f"{args.command}: missing --{missing[0].replace('_', '-')}")
        with threadpool_limits(limits=cfg.threads):
            return args.func(cfg)
    except SingularSystemError as exc:
        print(f"dlfh: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DLFHError, ValueError) as exc:
        print(f"dlfh: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
