"""Command-line interface.

Subcommands: generate (synthetic benchmark or sample portfolio datasets),
train (fit one model, emit a checkpoint and a training history CSV), cv
(cross-validated comparison, emit a results CSV), and decompose (per-loan
risk factor scores from a decomposed-head checkpoint).

Exit codes: 0 success, 2 usage error, 3 data validation error, 4 training
divergence. Set NEUCREDIT_THREADS to run cross-validation folds in
parallel threads; results are assembled in fold order either way, so the
output is identical.
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import data as datamod
from .checkpoint import load_checkpoint, save_checkpoint, write_atomic
from .data import DataValidationError, FeatureScaler
from .evaluation import (CELL_KINDS, HIERARCHICAL_KINDS, MODEL_KINDS,
                         _make_model_spec, _split_train_val, run_experiment)
from .network import FlatConfig, build_model
from .numerics import derive_seed
from .training import TrainingConfig, TrainingDiverged, train


class UsageError(ValueError):
    pass


def _fmt(x):
    return repr(float(x))


def _add_training_args(p):
    p.add_argument("--optimizer", choices=["adam", "rmsprop"], default=None,
                   help="default: adam for fused models, rmsprop for bare cells")
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=1000)
    p.add_argument("--max-epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--hidden", type=int, default=5, help="hidden width per cell")
    p.add_argument("--d-z", type=int, default=5, help="fused factor width")
    p.add_argument("--d-m", type=int, default=8, help="latent risk channels per entry")
    p.add_argument("--max-loans", type=int, default=15)
    p.add_argument("--max-events", type=int, default=15)


def build_parser():
    parser = argparse.ArgumentParser(prog="neucredit")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a dataset as JSON lines")
    g.add_argument("--kind", choices=["synthetic", "portfolio"], default="synthetic")
    g.add_argument("--n", type=int, required=True, help="number of sequences")
    g.add_argument("--len", type=int, dest="length", default=50,
                   help="steps per synthetic sequence")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--per-sequence-params", action="store_true",
                   help="redraw the synthetic transform per sequence")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--model", choices=[k for k in MODEL_KINDS
                                       if k not in ("random", "lr-loan", "lr-all")],
                   required=True)
    t.add_argument("--view", choices=["loan", "order", "session", "all"],
                   default=None)
    t.add_argument("--loss", choices=["bce", "conditional"], default="bce")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--history", default=None,
                   help="history CSV path (default: next to the checkpoint)")
    _add_training_args(t)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("cv", help="cross-validated AUC comparison")
    c.add_argument("--data", required=True)
    c.add_argument("--model", choices=list(MODEL_KINDS), action="append",
                   required=True, help="repeatable")
    c.add_argument("--view", choices=["loan", "order", "session", "all"],
                   default=None)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--folds", type=int, default=5)
    c.add_argument("--out", required=True)
    _add_training_args(c)
    c.set_defaults(func=cmd_cv)

    d = sub.add_parser("decompose", help="per-loan risk factor scores")
    d.add_argument("--data", required=True)
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decompose)
    return parser


def cmd_generate(args):
    if args.kind == "synthetic":
        seqs = datamod.generate_synthetic(args.n, args.length, args.seed,
                                          per_sequence_params=args.per_sequence_params)
        datamod.save_flat_dataset(args.out, seqs)
        total = sum(len(s.labels) for s in seqs)
        positive = sum(sum(s.labels) for s in seqs)
        print("wrote %d sequences (%d steps) to %s" % (len(seqs), total, args.out))
        print("positive fraction %.6f (%d/%d)" % (positive / total, positive, total))
    else:
        consumers = datamod.generate_portfolio(args.n, args.seed)
        datamod.save_consumer_dataset(args.out, consumers)
        total = sum(len(c.loans) for c in consumers)
        positive = sum(loan.y for c in consumers for loan in c.loans)
        print("wrote %d consumers (%d loans) to %s" % (len(consumers), total, args.out))
        print("positive fraction %.6f (%d/%d)" % (positive / total, positive, total))
    return 0


def _resolve_view(model, view, dataset_kind):
    if model in HIERARCHICAL_KINDS:
        if view not in (None, "all"):
            raise UsageError("%s models fuse every stream; use --view all" % model)
        if dataset_kind == "flat":
            raise UsageError("%s needs consumer data" % model)
        return "all"
    if view == "all":
        raise UsageError("cell models take a single stream view")
    view = view or "loan"
    if dataset_kind == "flat" and view != "loan":
        raise UsageError("flat datasets only support the default view")
    return view


def _check_loss(args):
    if args.model == "neucredit" and args.loss != "conditional":
        raise UsageError("model neucredit requires --loss conditional")
    if args.loss == "conditional" and args.model != "neucredit":
        raise UsageError("--loss conditional requires the neucredit model")


def _training_config(args, kind):
    opt = args.optimizer or ("rmsprop" if kind in CELL_KINDS else "adam")
    return TrainingConfig(optimizer=opt, lr=args.lr, batch_size=args.batch_size,
                          max_epochs=args.max_epochs, patience=args.patience,
                          loss=getattr(args, "loss", "bce"), seed=args.seed)


def _load_any(path):
    kind = datamod.sniff_dataset_kind(path)
    if kind == "consumer":
        return kind, datamod.load_consumer_dataset(path)
    return kind, datamod.load_flat_dataset(path)


def cmd_train(args):
    _check_loss(args)
    dataset_kind, items = _load_any(args.data)
    view = _resolve_view(args.model, args.view, dataset_kind)

    if dataset_kind == "consumer":
        widths = (len(items[0].loans[0].features), len(items[0].loans[0].orders[0]),
                  len(items[0].loans[0].sessions[0]))
        width = widths[0]
        max_len = args.max_loans
    else:
        widths = None
        width = len(items[0].features[0])
        max_len = max(len(s.features) for s in items)

    cfg, loss_kind = _make_model_spec(args.model, view, dataset_kind, width,
                                      widths, args.hidden, args.d_z, args.d_m,
                                      args.max_loans, args.max_events, max_len)
    fit_items, val_items = _split_train_val(items, derive_seed(args.seed, 700),
                                            args.val_fraction)

    def prepare(subset):
        if dataset_kind == "consumer":
            batch = datamod.pad_and_mask(subset, max_loans=args.max_loans,
                                         max_events=args.max_events)
        else:
            batch = datamod.pad_flat(subset, max_len=max_len)
        return batch

    fit_raw, val_raw = prepare(fit_items), prepare(val_items)
    scaler = FeatureScaler().fit(fit_raw)
    fit_batch, val_batch = scaler.transform(fit_raw), scaler.transform(val_raw)
    if isinstance(cfg, FlatConfig) and dataset_kind == "consumer":
        fit_batch, val_batch = (datamod.loan_view_batch(fit_batch),
                                datamod.loan_view_batch(val_batch))

    tcfg = _training_config(args, args.model)
    tcfg.loss = loss_kind
    model = build_model(cfg, seed=derive_seed(args.seed, 100))
    result = train(model, fit_batch, val_batch, tcfg)

    history_path = args.history or (os.path.splitext(args.checkpoint)[0]
                                    + "_history.csv")
    lines = ["epoch,train_loss,val_loss,val_auc"]
    for epoch, tl, vl, va in result.history:
        lines.append("%d,%s,%s,%s" % (epoch, _fmt(tl), _fmt(vl), _fmt(va)))
    write_atomic(history_path, "\n".join(lines) + "\n")

    save_checkpoint(args.checkpoint, model, scaler, metadata={
        "model": args.model, "view": view, "loss": loss_kind, "seed": args.seed,
        "data": os.path.abspath(args.data), "best_epoch": result.best_epoch,
        "best_val_auc": result.best_val_auc})
    print("best epoch %d, validation AUC %.6f" % (result.best_epoch,
                                                  result.best_val_auc))
    print("checkpoint written to %s" % args.checkpoint)
    return 0


def cmd_cv(args):
    models = []
    for m in args.model:
        if m not in models:
            models.append(m)
    dataset_kind, items = _load_any(args.data)
    threads = int(os.environ.get("NEUCREDIT_THREADS", "1"))
    rows = []
    for kind in models:
        view = (None if kind in ("random", "lr-loan", "lr-all")
                else _resolve_view(kind, args.view, dataset_kind))
        tcfg = None
        if kind not in ("random", "lr-loan", "lr-all"):
            tcfg = _training_config(args, kind)
        result = run_experiment(kind, items, args.seed, view=view or "loan",
                                training=tcfg, hidden=args.hidden, d_z=args.d_z,
                                d_m=args.d_m, max_loans=args.max_loans,
                                max_events=args.max_events, n_folds=args.folds,
                                threads=threads)
        rows.append(result)
        print("%s: mean AUC %.6f (sd %.6f)" % (result.method, result.mean_auc,
                                               result.sd))
    header = ["method"] + ["auc_%d" % (i + 1) for i in range(args.folds)]
    header += ["avg_auc", "sd"]
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join([r.method] + [_fmt(a) for a in r.fold_aucs]
                              + [_fmt(r.mean_auc), _fmt(r.sd)]))
    write_atomic(args.out, "\n".join(lines) + "\n")
    print("results written to %s" % args.out)
    return 0


def cmd_decompose(args):
    model, scaler, metadata = load_checkpoint(args.checkpoint)
    if metadata.get("loss") != "conditional" and model.config.to_dict().get(
            "head") != "decomposed":
        raise UsageError("decompose needs a checkpoint with a decomposed head")
    dataset_kind, items = _load_any(args.data)
    if dataset_kind != "consumer":
        raise UsageError("decompose needs consumer data")
    cfg = model.config
    batch = scaler.transform(datamod.pad_and_mask(items, max_loans=cfg.max_loans,
                                                  max_events=cfg.max_events))
    pred = model.predict(batch)
    lines = ["consumer_id,loan_index,y,r,y_hat,y_a,y_w,y_b"]
    for k, cid in enumerate(batch.consumer_ids):
        for i in range(batch.loan_mask.shape[1]):
            if batch.loan_mask[k, i] != 1.0:
                continue
            lines.append(",".join([cid, str(i), str(int(batch.y[k, i])),
                                   _fmt(batch.r[k, i]), _fmt(pred["y_hat"][k, i]),
                                   _fmt(pred["y_a"][k, i]), _fmt(pred["y_w"][k, i]),
                                   _fmt(pred["y_b"][k, i])]))
    write_atomic(args.out, "\n".join(lines) + "\n")
    print("decomposition written to %s" % args.out)
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print("error: %s" % e, file=sys.stderr)
        return 2
    except DataValidationError as e:
        print("data error: %s" % e, file=sys.stderr)
        return 3
    except TrainingDiverged as e:
        print("training diverged: %s" % e, file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
