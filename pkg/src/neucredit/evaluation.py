"""Scoring and the cross-validated experiment harness.

`auc` is the rank-based area under the ROC curve with ties counted half,
algebraically identical to the fraction of concordant positive/negative
pairs. The harness runs a model specification through stratified five-fold
cross-validation: standardization is fit on each fold's training side only,
a validation slice of the training consumers drives early stopping, and the
AUC is pooled over all valid steps of the untouched test fold.

Logistic regression baselines use full-batch gradient descent from zero
weights. The loan-only variant sees each loan's standardized features
(interval included); the all-views variant appends the per-loan means of
the standardized order and session event features.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import data as datamod
from .data import (ConsumerSequence, FlatSequence, FeatureScaler, FlatBatch,
                   five_fold_split, loan_view_batch, pad_and_mask, pad_flat)
from .network import FlatConfig, HierarchicalModel, NetworkConfig, SequenceModel
from .numerics import Rng, derive_seed
from .training import TrainingConfig, batch_loss, train


def auc(scores, labels):
    """Area under the ROC curve via average ranks; ties count one half.

    Equal to (concordant pairs + 0.5 * tied pairs) / (positives * negatives).
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes, got %d positive / %d negative"
                         % (n_pos, n_neg))
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def pooled_scores(y_hat, y, mask):
    """Flatten per-step predictions and labels over the valid positions."""
    valid = mask == 1.0
    return y_hat[valid].ravel(), y[valid].astype(int).ravel()


# ---------------------------------------------------------------------------
# logistic regression baselines

class LogisticRegression:
    """Plain logistic regression trained by full-batch gradient descent."""

    def __init__(self, lr=0.1, n_iter=500):
        self.lr = lr
        self.n_iter = n_iter
        self.w = None
        self.b = 0.0

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).ravel()
        n, d = X.shape
        self.w = np.zeros(d)
        self.b = 0.0
        for _ in range(self.n_iter):
            p = self.predict_proba(X)
            err = p - y
            self.w -= self.lr * (X.T @ err) / n
            self.b -= self.lr * err.mean()
        return self

    def predict_proba(self, X):
        z = np.asarray(X, dtype=np.float64) @ self.w + self.b
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-z))


def lr_features_loan(batch):
    """One row per valid loan step: the loan's standardized features."""
    rows, labels = [], []
    n, n_loans = batch.loan_mask.shape
    for k in range(n):
        for i in range(n_loans):
            if batch.loan_mask[k, i] != 1.0:
                continue
            rows.append(batch.loan_feats[k, i])
            labels.append(int(batch.y[k, i]))
    return np.asarray(rows), np.asarray(labels)


def lr_features_all(batch):
    """Loan features plus the means of the loan's order and session events."""
    rows, labels = [], []
    n, n_loans = batch.loan_mask.shape
    for k in range(n):
        for i in range(n_loans):
            if batch.loan_mask[k, i] != 1.0:
                continue
            om = batch.order_mask[k, i] == 1.0
            sm = batch.session_mask[k, i] == 1.0
            order_mean = batch.order_feats[k, i][om].mean(axis=0)
            session_mean = batch.session_feats[k, i][sm].mean(axis=0)
            rows.append(np.concatenate([batch.loan_feats[k, i], order_mean,
                                        session_mean]))
            labels.append(int(batch.y[k, i]))
    return np.asarray(rows), np.asarray(labels)


# ---------------------------------------------------------------------------
# experiment harness

MODEL_KINDS = ("random", "lr-loan", "lr-all", "lstm", "lstm-w-dt", "tlstm",
               "tva", "fc-tva", "mvm-tva", "neucredit")
HIERARCHICAL_KINDS = ("fc-tva", "mvm-tva", "neucredit")
CELL_KINDS = ("lstm", "lstm-w-dt", "tlstm", "tva")


@dataclass
class ExperimentResult:
    method: str
    fold_aucs: list
    mean_auc: float
    sd: float


def default_training(kind):
    """Adam for fused models, RMSprop for bare-cell comparisons."""
    cfg = TrainingConfig()
    if kind in CELL_KINDS:
        cfg.optimizer = "rmsprop"
    if kind == "neucredit":
        cfg.loss = "conditional"
    return cfg


def _split_train_val(items, seed, val_fraction):
    """Stratified validation carve-out from a fold's training items."""
    rng = Rng(seed)
    by_class = {False: [], True: []}
    for item in items:
        by_class[bool(item.has_default)].append(item)
    fit_items, val_items = [], []
    for flag in (False, True):
        group = by_class[flag]
        if not group:
            continue
        order = rng.permutation(len(group))
        n_val = max(1, int(round(val_fraction * len(group))))
        take = set(order[:n_val].tolist())
        for i, item in enumerate(group):
            (val_items if i in take else fit_items).append(item)
    return fit_items, val_items


def _make_model_spec(kind, view, dataset_kind, width, widths, hidden, d_z, d_m,
                     max_loans, max_events, max_len):
    """Resolve (config, loss kind) for a model kind on a dataset shape."""
    if kind in CELL_KINDS:
        if dataset_kind == "flat" or view == "loan":
            d_in = width if dataset_kind == "flat" else widths[0]
            cfg = FlatConfig(d_in=d_in, d_h=hidden, cell=kind, d_m=d_m,
                             max_len=max_len if dataset_kind == "flat" else max_loans)
        else:
            cfg = NetworkConfig(d_l=widths[0], d_o=widths[1], d_s=widths[2],
                                d_ho=hidden, d_hs=hidden, d_hl=hidden, d_z=d_z,
                                d_m=d_m, max_loans=max_loans, max_events=max_events,
                                view=view, fusion="none", head="plain",
                                cell_loans=kind, cell_orders=kind, cell_sessions=kind)
        return cfg, "bce"
    fusionkind = {"fc-tva": "fc", "mvm-tva": "mvm", "neucredit": "mvm"}[kind]
    head = "decomposed" if kind == "neucredit" else "plain"
    cfg = NetworkConfig(d_l=widths[0], d_o=widths[1], d_s=widths[2],
                        d_ho=hidden, d_hs=hidden, d_hl=hidden, d_z=d_z, d_m=d_m,
                        max_loans=max_loans, max_events=max_events,
                        view="all", fusion=fusionkind, head=head)
    return cfg, ("conditional" if kind == "neucredit" else "bce")


def run_experiment(kind, dataset, seed, view="loan", training=None, hidden=5,
                   d_z=5, d_m=8, max_loans=15, max_events=15, n_folds=5,
                   val_fraction=0.2, threads=1):
    """Cross-validate one model kind; returns per-fold and mean AUCs.

    Folds are independent, so `threads` > 1 runs them in a thread pool;
    results are assembled in fold order, making the output identical.
    """
    if kind not in MODEL_KINDS:
        raise ValueError("unknown model kind %r" % (kind,))
    dataset_kind = "consumer" if isinstance(dataset[0], ConsumerSequence) else "flat"
    if kind in HIERARCHICAL_KINDS + ("lr-loan", "lr-all") and dataset_kind != "consumer":
        raise ValueError("%s needs consumer data" % kind)

    if dataset_kind == "consumer":
        widths = (len(dataset[0].loans[0].features),
                  len(dataset[0].loans[0].orders[0]),
                  len(dataset[0].loans[0].sessions[0]))
        width = widths[0]
        max_len = max_loans
    else:
        widths = None
        width = len(dataset[0].features[0])
        max_len = max(len(s.features) for s in dataset)

    folds = five_fold_split(dataset, seed, n_folds=n_folds)
    for f, (train_items, test_items) in enumerate(folds):
        train_ids = {id(x) for x in train_items}
        if any(id(x) in train_ids for x in test_items):
            raise AssertionError("fold %d leaks items between train and test" % f)

    def fold_job(f):
        train_items, test_items = folds[f]
        return _run_fold(kind, view, dataset_kind, train_items, test_items,
                         seed, f, width, widths, hidden, d_z, d_m,
                         max_loans, max_events, max_len, training, val_fraction)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fold_aucs = list(pool.map(fold_job, range(n_folds)))
    else:
        fold_aucs = [fold_job(f) for f in range(n_folds)]
    mean_auc = float(np.mean(fold_aucs))
    sd = float(np.std(fold_aucs))
    return ExperimentResult(method=_method_name(kind, view, dataset_kind),
                            fold_aucs=fold_aucs, mean_auc=mean_auc, sd=sd)


def _method_name(kind, view, dataset_kind):
    if kind in CELL_KINDS and dataset_kind == "consumer":
        return "%s(%s)" % (kind, view)
    return kind


def _pad(items, dataset_kind, max_loans, max_events, max_len):
    if dataset_kind == "consumer":
        return pad_and_mask(items, max_loans=max_loans, max_events=max_events)
    return pad_flat(items, max_len=max_len)


def _run_fold(kind, view, dataset_kind, train_items, test_items, seed, fold,
              width, widths, hidden, d_z, d_m, max_loans, max_events, max_len,
              training, val_fraction):
    test_batch_raw = _pad(test_items, dataset_kind, max_loans, max_events, max_len)

    if kind == "random":
        rng = Rng(derive_seed(seed, 900, fold))
        mask = test_batch_raw.label_mask
        scores = rng.uniform(0.0, 1.0, mask.shape[0], mask.shape[1])
        s, l = pooled_scores(scores, test_batch_raw.y, mask)
        return auc(s, l)

    train_batch_raw = _pad(train_items, dataset_kind, max_loans, max_events, max_len)
    scaler = FeatureScaler().fit(train_batch_raw)
    train_batch = scaler.transform(train_batch_raw)
    test_batch = scaler.transform(test_batch_raw)

    if kind in ("lr-loan", "lr-all"):
        build = lr_features_loan if kind == "lr-loan" else lr_features_all
        X_tr, y_tr = build(train_batch)
        X_te, y_te = build(test_batch)
        model = LogisticRegression().fit(X_tr, y_tr)
        return auc(model.predict_proba(X_te), y_te)

    fit_items, val_items = _split_train_val(train_items, derive_seed(seed, 700, fold),
                                            val_fraction)
    fit_batch = scaler.transform(_pad(fit_items, dataset_kind, max_loans,
                                      max_events, max_len))
    val_batch = scaler.transform(_pad(val_items, dataset_kind, max_loans,
                                      max_events, max_len))

    cfg, loss_kind = _make_model_spec(kind, view, dataset_kind, width, widths,
                                      hidden, d_z, d_m, max_loans, max_events,
                                      max_len)
    tcfg = dataclasses.replace(training) if training else default_training(kind)
    tcfg.loss = loss_kind  # the model kind decides the loss
    tcfg.seed = derive_seed(seed, 800, fold)
    model = _build(cfg, kind, view, dataset_kind, derive_seed(seed, 100, fold))
    fit_view = _view_batch(fit_batch, cfg, dataset_kind)
    val_view = _view_batch(val_batch, cfg, dataset_kind)
    test_view = _view_batch(test_batch, cfg, dataset_kind)
    train(model, fit_view, val_view, tcfg)
    pred = model.predict(test_view)
    s, l = pooled_scores(pred["y_hat"], test_view.y, test_view.label_mask)
    return auc(s, l)


def _build(cfg, kind, view, dataset_kind, model_seed):
    if isinstance(cfg, FlatConfig):
        return SequenceModel(cfg, seed=model_seed)
    return HierarchicalModel(cfg, seed=model_seed)


def _view_batch(batch, cfg, dataset_kind):
    if isinstance(cfg, FlatConfig) and dataset_kind == "consumer":
        return loan_view_batch(batch)
    return batch
