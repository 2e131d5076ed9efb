"""Datasets: loading, validation, padding, standardization, and generators.

Two dataset shapes are supported, both stored as JSON lines:

- consumer records: a consumer holds 3..15 loans in issuance order; each
  loan carries its feature vector (elapsed-time interval in column 0), a
  default label y, a repayment ratio r, and the 3..15 orders and 3..15 app
  sessions observed since the previous loan (interval in column 0 of each
  event vector as well);
- flat records: a plain labeled sequence of steps, each with one feature
  vector (interval in column 0) and a step label.

Padding produces dense batch arrays plus 0/1 masks; valid steps always form
a prefix, and padded positions are all-zero. Standardization is fit on
training batches only (per-feature mean/std over valid positions) and the
fitted transform is applied unchanged to validation and test batches.
"""

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from .numerics import Rng

MIN_EVENTS = 3
MAX_EVENTS = 15


class DataValidationError(ValueError):
    """Raised with a line-numbered message when a record breaks the schema."""


# ---------------------------------------------------------------------------
# record types

@dataclass
class LoanEvent:
    features: list
    y: int
    r: float
    orders: list      # list of order feature vectors
    sessions: list    # list of session feature vectors


@dataclass
class ConsumerSequence:
    consumer_id: str
    loans: list

    @property
    def has_default(self):
        return any(loan.y == 1 for loan in self.loans)


@dataclass
class FlatSequence:
    sequence_id: str
    features: list    # list of step feature vectors
    labels: list      # one 0/1 label per step

    @property
    def has_default(self):
        return any(y == 1 for y in self.labels)


# ---------------------------------------------------------------------------
# validation helpers

def _check_vector(line_no, what, vec, width=None):
    if not isinstance(vec, list) or not vec:
        raise DataValidationError("line %d: %s must be a non-empty list" % (line_no, what))
    for v in vec:
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            raise DataValidationError("line %d: %s has a non-finite or non-numeric entry"
                                      % (line_no, what))
    if width is not None and len(vec) != width:
        raise DataValidationError("line %d: %s has %d features, expected %d"
                                  % (line_no, what, len(vec), width))
    if vec[0] < 0:
        raise DataValidationError("line %d: %s has a negative interval in column 0"
                                  % (line_no, what))
    return [float(v) for v in vec]


def _check_length(line_no, what, count):
    if count < MIN_EVENTS:
        raise DataValidationError("line %d: %s has %d events, below the minimum length of %d"
                                  % (line_no, what, count, MIN_EVENTS))
    if count > MAX_EVENTS:
        raise DataValidationError("line %d: %s has %d events, above the maximum length of %d"
                                  % (line_no, what, count, MAX_EVENTS))


def _check_label(line_no, y):
    if y not in (0, 1):
        raise DataValidationError("line %d: label y must be 0 or 1, got %r" % (line_no, y))
    return int(y)


# ---------------------------------------------------------------------------
# jsonl io

def _iter_jsonl(path):
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as e:
                raise DataValidationError("line %d: invalid JSON (%s)" % (line_no, e))


def load_consumer_dataset(path):
    """Read and validate consumer records; widths must agree across the file."""
    consumers = []
    widths = {}
    for line_no, obj in _iter_jsonl(path):
        if not isinstance(obj, dict) or "consumer_id" not in obj or "loans" not in obj:
            raise DataValidationError(
                "line %d: expected an object with consumer_id and loans" % line_no)
        raw_loans = obj["loans"]
        if not isinstance(raw_loans, list):
            raise DataValidationError("line %d: loans must be a list" % line_no)
        _check_length(line_no, "loan sequence", len(raw_loans))
        loans = []
        for loan in raw_loans:
            if not isinstance(loan, dict):
                raise DataValidationError("line %d: each loan must be an object" % line_no)
            for key in ("features", "y", "r", "orders", "sessions"):
                if key not in loan:
                    raise DataValidationError("line %d: loan missing key %r" % (line_no, key))
            feats = _check_vector(line_no, "loan features", loan["features"],
                                  widths.get("loan"))
            widths.setdefault("loan", len(feats))
            y = _check_label(line_no, loan["y"])
            r = loan["r"]
            if not isinstance(r, (int, float)) or isinstance(r, bool) or not (0.0 <= r <= 1.0):
                raise DataValidationError(
                    "line %d: repayment ratio r must lie in [0, 1], got %r" % (line_no, r))
            _check_length(line_no, "order sub-sequence", len(loan["orders"]))
            _check_length(line_no, "session sub-sequence", len(loan["sessions"]))
            orders = []
            for vec in loan["orders"]:
                orders.append(_check_vector(line_no, "order features", vec,
                                            widths.get("order")))
                widths.setdefault("order", len(orders[-1]))
            sessions = []
            for vec in loan["sessions"]:
                sessions.append(_check_vector(line_no, "session features", vec,
                                              widths.get("session")))
                widths.setdefault("session", len(sessions[-1]))
            loans.append(LoanEvent(features=feats, y=y, r=float(r),
                                   orders=orders, sessions=sessions))
        consumers.append(ConsumerSequence(consumer_id=str(obj["consumer_id"]), loans=loans))
    if not consumers:
        raise DataValidationError("line 0: dataset is empty")
    return consumers


def save_consumer_dataset(path, consumers):
    with open(path, "w", encoding="utf-8") as fh:
        for c in consumers:
            obj = {"consumer_id": c.consumer_id,
                   "loans": [{"features": loan.features, "y": loan.y, "r": loan.r,
                              "orders": loan.orders, "sessions": loan.sessions}
                             for loan in c.loans]}
            fh.write(json.dumps(obj) + "\n")


def load_flat_dataset(path):
    sequences = []
    width = None
    for line_no, obj in _iter_jsonl(path):
        if not isinstance(obj, dict) or "sequence_id" not in obj or "steps" not in obj:
            raise DataValidationError(
                "line %d: expected an object with sequence_id and steps" % line_no)
        steps = obj["steps"]
        if not isinstance(steps, list) or not steps:
            raise DataValidationError("line %d: steps must be a non-empty list" % line_no)
        feats, labels = [], []
        for s in steps:
            if not isinstance(s, dict) or "features" not in s or "y" not in s:
                raise DataValidationError(
                    "line %d: each step needs features and y" % line_no)
            vec = _check_vector(line_no, "step features", s["features"], width)
            width = width or len(vec)
            feats.append(vec)
            labels.append(_check_label(line_no, s["y"]))
        sequences.append(FlatSequence(sequence_id=str(obj["sequence_id"]),
                                      features=feats, labels=labels))
    if not sequences:
        raise DataValidationError("line 0: dataset is empty")
    return sequences


def save_flat_dataset(path, sequences):
    with open(path, "w", encoding="utf-8") as fh:
        for s in sequences:
            obj = {"sequence_id": s.sequence_id,
                   "steps": [{"features": f, "y": y}
                             for f, y in zip(s.features, s.labels)]}
            fh.write(json.dumps(obj) + "\n")


def sniff_dataset_kind(path):
    """Peek at the first record: 'consumer' or 'flat'."""
    for _, obj in _iter_jsonl(path):
        if isinstance(obj, dict) and "loans" in obj:
            return "consumer"
        if isinstance(obj, dict) and "steps" in obj:
            return "flat"
        break
    raise DataValidationError("line 1: unrecognized dataset record")


# ---------------------------------------------------------------------------
# padded batches

@dataclass
class PaddedBatch:
    consumer_ids: list
    loan_feats: np.ndarray     # (B, L, d_l)
    loan_dts: np.ndarray       # (B, L) raw intervals
    loan_mask: np.ndarray      # (B, L)
    y: np.ndarray              # (B, L)
    r: np.ndarray              # (B, L)
    order_feats: np.ndarray    # (B, L, E, d_o)
    order_dts: np.ndarray      # (B, L, E)
    order_mask: np.ndarray     # (B, L, E)
    session_feats: np.ndarray  # (B, L, E, d_s)
    session_dts: np.ndarray    # (B, L, E)
    session_mask: np.ndarray   # (B, L, E)

    @property
    def label_mask(self):
        return self.loan_mask


@dataclass
class FlatBatch:
    ids: list
    feats: np.ndarray  # (B, T, d)
    dts: np.ndarray    # (B, T) raw intervals
    mask: np.ndarray   # (B, T)
    y: np.ndarray      # (B, T)
    r: np.ndarray      # (B, T)

    @property
    def label_mask(self):
        return self.mask


def pad_and_mask(consumers, max_loans=15, max_events=15):
    """Tensorize consumer sequences with trailing zero padding and masks."""
    n = len(consumers)
    d_l = len(consumers[0].loans[0].features)
    d_o = len(consumers[0].loans[0].orders[0])
    d_s = len(consumers[0].loans[0].sessions[0])
    b = PaddedBatch(
        consumer_ids=[c.consumer_id for c in consumers],
        loan_feats=np.zeros((n, max_loans, d_l)),
        loan_dts=np.zeros((n, max_loans)),
        loan_mask=np.zeros((n, max_loans)),
        y=np.zeros((n, max_loans)),
        r=np.zeros((n, max_loans)),
        order_feats=np.zeros((n, max_loans, max_events, d_o)),
        order_dts=np.zeros((n, max_loans, max_events)),
        order_mask=np.zeros((n, max_loans, max_events)),
        session_feats=np.zeros((n, max_loans, max_events, d_s)),
        session_dts=np.zeros((n, max_loans, max_events)),
        session_mask=np.zeros((n, max_loans, max_events)))
    for k, c in enumerate(consumers):
        if len(c.loans) > max_loans:
            raise DataValidationError("consumer %s has %d loans, exceeding padding of %d"
                                      % (c.consumer_id, len(c.loans), max_loans))
        for i, loan in enumerate(c.loans):
            b.loan_feats[k, i, :] = loan.features
            b.loan_dts[k, i] = loan.features[0]
            b.loan_mask[k, i] = 1.0
            b.y[k, i] = loan.y
            b.r[k, i] = loan.r
            for group, feats_arr, dts_arr, mask_arr in (
                    (loan.orders, b.order_feats, b.order_dts, b.order_mask),
                    (loan.sessions, b.session_feats, b.session_dts, b.session_mask)):
                if len(group) > max_events:
                    raise DataValidationError(
                        "consumer %s loan %d has %d events, exceeding padding of %d"
                        % (c.consumer_id, i, len(group), max_events))
                for j, vec in enumerate(group):
                    feats_arr[k, i, j, :] = vec
                    dts_arr[k, i, j] = vec[0]
                    mask_arr[k, i, j] = 1.0
    return b


def pad_flat(sequences, max_len=None):
    n = len(sequences)
    d = len(sequences[0].features[0])
    longest = max(len(s.features) for s in sequences)
    if max_len is None:
        max_len = longest
    elif longest > max_len:
        raise DataValidationError("sequence length %d exceeds padding of %d"
                                  % (longest, max_len))
    b = FlatBatch(
        ids=[s.sequence_id for s in sequences],
        feats=np.zeros((n, max_len, d)),
        dts=np.zeros((n, max_len)),
        mask=np.zeros((n, max_len)),
        y=np.zeros((n, max_len)),
        r=np.zeros((n, max_len)))
    for k, s in enumerate(sequences):
        for t, vec in enumerate(s.features):
            b.feats[k, t, :] = vec
            b.dts[k, t] = vec[0]
            b.mask[k, t] = 1.0
            b.y[k, t] = s.labels[t]
    return b


def loan_view_batch(batch):
    """Project a consumer batch onto its loan stream as a flat batch."""
    return FlatBatch(ids=list(batch.consumer_ids), feats=batch.loan_feats.copy(),
                     dts=batch.loan_dts.copy(), mask=batch.loan_mask.copy(),
                     y=batch.y.copy(), r=batch.r.copy())


def subset_batch(batch, idx):
    """Select a subset of sequences (axis 0) from a padded batch."""
    idx = np.asarray(idx, dtype=np.intp)
    kwargs = {}
    for f in dataclasses.fields(batch):
        v = getattr(batch, f.name)
        if isinstance(v, np.ndarray):
            kwargs[f.name] = v[idx].copy()
        else:
            kwargs[f.name] = [v[int(i)] for i in idx]
    return type(batch)(**kwargs)


def unpad_consumer_batch(batch):
    """Inverse of pad_and_mask on raw (untransformed) batches."""
    consumers = []
    for k, cid in enumerate(batch.consumer_ids):
        loans = []
        for i in range(batch.loan_mask.shape[1]):
            if batch.loan_mask[k, i] != 1.0:
                continue
            orders = [batch.order_feats[k, i, j].tolist()
                      for j in range(batch.order_mask.shape[2])
                      if batch.order_mask[k, i, j] == 1.0]
            sessions = [batch.session_feats[k, i, j].tolist()
                        for j in range(batch.session_mask.shape[2])
                        if batch.session_mask[k, i, j] == 1.0]
            loans.append(LoanEvent(features=batch.loan_feats[k, i].tolist(),
                                   y=int(batch.y[k, i]), r=float(batch.r[k, i]),
                                   orders=orders, sessions=sessions))
        consumers.append(ConsumerSequence(consumer_id=cid, loans=loans))
    return consumers


def unpad_flat_batch(batch):
    sequences = []
    for k, sid in enumerate(batch.ids):
        feats, labels = [], []
        for t in range(batch.mask.shape[1]):
            if batch.mask[k, t] != 1.0:
                continue
            feats.append(batch.feats[k, t].tolist())
            labels.append(int(batch.y[k, t]))
        sequences.append(FlatSequence(sequence_id=sid, features=feats, labels=labels))
    return sequences


# ---------------------------------------------------------------------------
# standardization

class FeatureScaler:
    """Per-feature standardization fit on the valid positions of a batch.

    Interval columns are standardized like any other feature; the raw
    interval arrays driving the cells' time paths are left untouched.
    Constant features get unit scale so they map to zero. Padded positions
    are re-zeroed after the affine map.
    """

    def __init__(self):
        self.stats = {}  # stream -> (mean (d,), std (d,))

    @staticmethod
    def _fit_stream(feats, mask):
        flat = feats.reshape(-1, feats.shape[-1])
        valid = mask.reshape(-1) == 1.0
        rows = flat[valid]
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        std[std == 0.0] = 1.0
        return mean, std

    def fit(self, batch):
        if isinstance(batch, PaddedBatch):
            self.stats["loan"] = self._fit_stream(batch.loan_feats, batch.loan_mask)
            self.stats["order"] = self._fit_stream(batch.order_feats, batch.order_mask)
            self.stats["session"] = self._fit_stream(batch.session_feats,
                                                     batch.session_mask)
        elif isinstance(batch, FlatBatch):
            self.stats["flat"] = self._fit_stream(batch.feats, batch.mask)
        else:
            raise TypeError("cannot fit scaler on %r" % (type(batch),))
        return self

    @staticmethod
    def _apply_stream(feats, mask, stats):
        mean, std = stats
        out = (feats - mean) / std
        out *= mask[..., None]
        return out

    def transform(self, batch):
        if isinstance(batch, PaddedBatch):
            return dataclasses.replace(
                batch,
                consumer_ids=list(batch.consumer_ids),
                loan_feats=self._apply_stream(batch.loan_feats, batch.loan_mask,
                                              self.stats["loan"]),
                order_feats=self._apply_stream(batch.order_feats, batch.order_mask,
                                               self.stats["order"]),
                session_feats=self._apply_stream(batch.session_feats, batch.session_mask,
                                                 self.stats["session"]))
        if isinstance(batch, FlatBatch):
            return dataclasses.replace(
                batch, ids=list(batch.ids),
                feats=self._apply_stream(batch.feats, batch.mask, self.stats["flat"]))
        raise TypeError("cannot transform %r" % (type(batch),))

    def fit_transform(self, batch):
        return self.fit(batch).transform(batch)

    def to_arrays(self):
        return {stream: (mean.copy(), std.copy())
                for stream, (mean, std) in self.stats.items()}

    @classmethod
    def from_arrays(cls, arrays):
        scaler = cls()
        scaler.stats = {stream: (np.asarray(mean, dtype=np.float64),
                                 np.asarray(std, dtype=np.float64))
                        for stream, (mean, std) in arrays.items()}
        return scaler


# ---------------------------------------------------------------------------
# cross-validation folds

def five_fold_split(items, seed, n_folds=5):
    """Deterministic stratified folds; returns (train, test) item lists.

    Stratifies on each sequence's has-default flag so both classes appear
    in every fold whenever counts allow.
    """
    rng = Rng(seed).child(11)
    strata = {False: [], True: []}
    for i, item in enumerate(items):
        strata[bool(item.has_default)].append(i)
    assignment = np.zeros(len(items), dtype=np.intp)
    offset = 0
    for flag in (False, True):
        idx = strata[flag]
        order = rng.permutation(len(idx))
        for pos, j in enumerate(order):
            assignment[idx[j]] = (offset + pos) % n_folds
        offset += len(idx)
    folds = []
    for f in range(n_folds):
        train = [items[i] for i in range(len(items)) if assignment[i] != f]
        test = [items[i] for i in range(len(items)) if assignment[i] == f]
        folds.append((train, test))
    return folds


# ---------------------------------------------------------------------------
# generators

def generate_synthetic(n_sequences, length, seed, per_sequence_params=False):
    """Benchmark sequences with a latent time-modulated linear system.

    Feature column 0 is the elapsed-time interval (0 at the first step,
    uniform on [0, 10] after). Columns 1..5 form a persistent block evolved
    by x_next = exp(w2 * dt + b2) * tanh(W1 x + b1), so the magnitude of the
    next state depends exponentially on the elapsed time. Columns 6..105 are
    noise redrawn uniformly on [-1, 1] at every step. The step label fires
    when sin(2 x1 + x2) + 3 x3 x4 - x5^3 >= 0 over the persistent block,
    which is the >= 0.5 region of the sigmoid of the same expression.
    """
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))

    def draw_params():
        return (gen.uniform(-1.0, 1.0, (5, 5)), gen.uniform(-1.0, 1.0, 5),
                gen.uniform(-1.0, 1.0, 5), gen.uniform(-1.0, 1.0, 5))

    if not per_sequence_params:
        w1, b1, w2, b2 = draw_params()
    sequences = []
    for s in range(n_sequences):
        if per_sequence_params:
            w1, b1, w2, b2 = draw_params()
        feats = np.zeros((length, 106))
        feats[0, 1:] = gen.uniform(-1.0, 1.0, 105)
        block = feats[0, 1:6].copy()
        for t in range(1, length):
            dt = gen.uniform(0.0, 10.0)
            block = np.exp(w2 * dt + b2) * np.tanh(w1 @ block + b1)
            feats[t, 0] = dt
            feats[t, 1:6] = block
            feats[t, 6:] = gen.uniform(-1.0, 1.0, 100)
        arg = (np.sin(2.0 * feats[:, 1] + feats[:, 2])
               + 3.0 * feats[:, 3] * feats[:, 4] - feats[:, 5] ** 3)
        labels = (arg >= 0.0).astype(int).tolist()
        sequences.append(FlatSequence(sequence_id="s%06d" % s,
                                      features=[row.tolist() for row in feats],
                                      labels=labels))
    return sequences


def label_argument(features_row):
    """The pre-sigmoid score behind a synthetic step label."""
    f = features_row
    return math.sin(2.0 * f[1] + f[2]) + 3.0 * f[3] * f[4] - f[5] ** 3


PORTFOLIO_BETAS = (-1.3, 1.0, -0.8, 1.2, 1.6)


def generate_portfolio(n_consumers, seed, d_l=15, d_o=45, d_s=16,
                       min_loans=3, max_loans=8, min_events=3, max_events=6,
                       betas=PORTFOLIO_BETAS):
    """Sample consumer histories with a planted default signal.

    Each loan draws a latent spending level m; order feature 1 observes m
    with noise, so the mean over the loan's orders recovers it. The default
    log-odds combine two loan features, the latent m, and the product of
    loan feature 1 with m, making sub-sequence information and a cross-view
    interaction both informative.
    """
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    b0, b1, b2, b3, b4 = betas
    consumers = []
    for k in range(n_consumers):
        n_loans = int(gen.integers(min_loans, max_loans + 1))
        loans = []
        for i in range(n_loans):
            m = gen.normal()
            feats = gen.normal(size=d_l)
            feats[0] = 0.0 if i == 0 else gen.uniform(1.0, 30.0)
            orders = []
            for j in range(int(gen.integers(min_events, max_events + 1))):
                vec = gen.normal(size=d_o)
                vec[0] = 0.0 if j == 0 else gen.uniform(0.0, 10.0)
                vec[1] = m + 0.3 * gen.normal()
                orders.append(vec.tolist())
            sessions = []
            for j in range(int(gen.integers(min_events, max_events + 1))):
                vec = gen.normal(size=d_s)
                vec[0] = 0.0 if j == 0 else gen.uniform(0.0, 1000.0)
                sessions.append(vec.tolist())
            m_obs = float(np.mean([o[1] for o in orders]))
            eta = b0 + b1 * feats[1] + b2 * feats[2] + b3 * m_obs + b4 * feats[1] * m_obs
            y = int(gen.random() < 1.0 / (1.0 + math.exp(-eta)))
            r = float(gen.uniform(0.0, 0.6)) if y else float(gen.uniform(0.7, 1.0))
            loans.append(LoanEvent(features=feats.tolist(), y=y, r=r,
                                   orders=orders, sessions=sessions))
        consumers.append(ConsumerSequence(consumer_id="c%05d" % k, loans=loans))
    return consumers
