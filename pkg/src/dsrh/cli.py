"""dsrh: synth / train / encode / search / eval / plot."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from dsrh import dataset, model as hm, retrieval
from dsrh.baseline import random_projection_codes
from dsrh.loss import LossConfig
from dsrh.metrics import MetricsReport, evaluate_queries, save_report
from dsrh.trainer import TrainConfig, encode_dataset, save_train_report, train


def _int_list(text: str) -> list[int]:
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated integer list, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("values must be positive integers")
    return values


def _float_list(text: str) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in text.split(",")], dtype=np.float64)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad feature vector {text!r}") from None


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _split(ds: dataset.MultiLabelDataset, query_count: int, split_seed: int):
    if query_count == 0:
        return ds.subset([]), ds
    return dataset.split_train_query(ds, query_count, np.random.default_rng(split_seed))


# -- subcommands ----------------------------------------------------------


def cmd_synth(args) -> None:
    from dsrh.synth import make_synthetic

    ds = make_synthetic(args.n, args.labels, args.dim, args.clusters, args.noise, args.seed)
    dataset.save_dataset(ds, args.out)
    print(f"wrote {len(ds)} points (dim={ds.dim}, labels={ds.label_count}) to {args.out}")


def cmd_train(args) -> None:
    ds = dataset.load_dataset(args.data)
    _, train_set = _split(ds, args.query_count, args.split_seed)
    loss_cfg = LossConfig(
        margin=args.margin, alpha=args.alpha, beta=args.beta, weighted=not args.unweighted, z_mode=args.z_mode
    )
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        momentum=args.momentum,
        loss=loss_cfg,
        dropout_keep=args.dropout_keep,
        list_length=args.list_length,
        seed=args.seed,
    )
    init = hm.init_weights([ds.dim, *args.hidden], args.bits, np.random.default_rng(args.seed))
    trained, report = train(init, train_set, cfg, progress=lambda s: print(s.line(), flush=True))
    hm.save_model(trained, args.model_out)
    report_path = args.report_out or args.model_out + ".report.txt"
    save_train_report(report, report_path)
    if report.epochs and not args.no_plot:
        from dsrh.plotting import figure_path, plot_training

        plot_training(report, figure_path(report_path))


def cmd_encode(args) -> None:
    ds = dataset.load_dataset(args.data)
    if args.random_projection:
        codes = random_projection_codes(ds.features, args.bits, np.random.default_rng(args.seed))
        db = retrieval.CodeDatabase.from_codes(ds.ids, codes)
    else:
        model = hm.load_model(args.model)
        if model.input_dim != ds.dim:
            raise ValueError(f"model expects {model.input_dim} features, dataset has {ds.dim}")
        db = encode_dataset(model, ds)
    retrieval.save_codes(db, args.codes_out)
    print(f"wrote {len(db)} codes of {db.bits} bits to {args.codes_out}")


def cmd_search(args) -> None:
    db = retrieval.load_codes(args.codes)
    model = hm.load_model(args.model)
    if model.bits != db.bits:
        raise ValueError(f"model produces {model.bits}-bit codes, database holds {db.bits}-bit codes")
    if args.query is not None:
        queries = [(None, args.query)]
    else:
        qs = dataset.load_dataset(args.query_file)
        queries = [(int(i), f) for i, f in zip(qs.ids, qs.features)]
    out = []
    for qid, features in queries:
        code = hm.forward_binary(model, features)[0]
        if qid is not None and len(queries) > 1:
            out.append(f"# query {qid}")
        for rank, (pid, dist) in enumerate(retrieval.search_topk(db, retrieval.pack(code), args.k), 1):
            out.append(f"{rank}\t{pid}\t{dist}")
    sys.stdout.write("\n".join(out) + "\n")


def cmd_eval(args) -> None:
    ds = dataset.load_dataset(args.data)
    codes = retrieval.load_codes(args.codes)
    row_of = {int(i): k for k, i in enumerate(codes.ids)}

    def coded(part: dataset.MultiLabelDataset) -> retrieval.CodeDatabase:
        missing = [int(i) for i in part.ids if int(i) not in row_of]
        if missing:
            raise ValueError(f"no code for dataset id {missing[0]}")
        rows = [row_of[int(i)] for i in part.ids]
        return retrieval.CodeDatabase(part.ids, codes.codes[rows], codes.bits)

    if args.query_codes:
        query_codes = retrieval.load_codes(args.query_codes)
        if query_codes.bits != codes.bits:
            raise ValueError("query and database codes differ in length")
        q_ids = {int(i) for i in query_codes.ids}
        q_labels = np.array([ds.label_matrix[ds.index_of(int(i))] for i in query_codes.ids])
        db_part = ds.subset([k for k, i in enumerate(ds.ids) if int(i) not in q_ids])
        db = coded(db_part)
    else:
        q_part, db_part = _split(ds, args.query_count, args.split_seed)
        if len(q_part) == 0:
            raise ValueError("--query-count must be positive")
        query_codes, q_labels = coded(q_part), q_part.label_matrix
        db = coded(db_part)
    report = evaluate_queries(db, db_part.label_matrix, query_codes, q_labels, args.cutoffs, args.map_cutoff)
    save_report(report, args.out)
    sys.stdout.write(report.to_text())
    if not args.no_plot:
        from dsrh.plotting import figure_path, plot_metrics

        plot_metrics({os.path.basename(args.codes): report}, figure_path(args.out))


def cmd_plot(args) -> None:
    from dsrh.plotting import plot_metrics

    names = args.names or [os.path.basename(p) for p in args.metrics]
    if len(names) != len(args.metrics):
        raise ValueError("--names needs one entry per metrics file")
    reports = {}
    for name, path in zip(names, args.metrics):
        with open(path, encoding="utf-8") as fh:
            reports[name] = MetricsReport.from_text(fh.read())
    plot_metrics(reports, args.out)


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dsrh", description="Semantic-ranking binary hashing toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-label dataset")
    p.add_argument("--n", type=_positive_int, default=2000)
    p.add_argument("--labels", type=_positive_int, default=8)
    p.add_argument("--dim", type=_positive_int, default=32)
    p.add_argument("--clusters", type=_positive_int, default=8)
    p.add_argument("--noise", type=float, default=2.0, help="std of isotropic Gaussian noise around centroids")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a hash model")
    p.add_argument("--data", required=True)
    p.add_argument("--bits", type=_positive_int, required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--report-out", help="train report path (default: <model-out>.report.txt)")
    p.add_argument("--hidden", type=_int_list, default=[128, 128], help="hidden widths, comma list (>= 2)")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=_positive_int, default=128)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=5e-4)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--dropout-keep", type=float, default=0.5)
    p.add_argument("--list-length", type=_positive_int, default=3)
    p.add_argument("--unweighted", action="store_true", help="plain triplet loss (all weights 1)")
    p.add_argument("--z-mode", choices=("list", "database"), default="list")
    p.add_argument("--query-count", type=int, default=0, help="hold out this many queries before training")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode a dataset into packed codes")
    p.add_argument("--data", required=True)
    p.add_argument("--codes-out", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--model")
    g.add_argument("--random-projection", action="store_true", help="sign of a seeded Gaussian projection")
    p.add_argument("--bits", type=_positive_int, help="code length for --random-projection")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("search", help="Hamming top-k search")
    p.add_argument("--codes", required=True)
    p.add_argument("--model", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--query", type=_float_list, help="comma-separated feature vector")
    g.add_argument("--query-file", help="dataset file whose rows are queries")
    p.add_argument("--k", type=_positive_int, default=10)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="ranking metrics of codes against label-derived levels")
    p.add_argument("--codes", required=True)
    p.add_argument("--data", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--query-count", type=int, help="random query split of the dataset")
    g.add_argument("--query-codes", help="code file whose ids are the queries")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--cutoffs", type=_int_list, default=[100])
    p.add_argument("--map-cutoff", type=_positive_int)
    p.add_argument("--out", required=True)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="overlay several metrics files in one figure")
    p.add_argument("metrics", nargs="+")
    p.add_argument("--names", type=lambda s: s.split(","))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "encode" and args.random_projection and args.bits is None:
        parser.error("--random-projection requires --bits")
    try:
        args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"dsrh: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
