"""Losses, optimizers, and the training loop.

Two losses over per-step default predictions:

- bce: binary cross-entropy with predictions clamped away from {0, 1};
- conditional: bce on the combined prediction plus penalty terms that give
  the decomposed factors their meaning. For defaulted steps the product of
  the complementary ability/willingness scores is penalized (a default
  implies low ability or low willingness to have been predicted); for repaid
  steps the ability score is pushed to zero and the willingness score toward
  the observed repayment ratio.

Both are averaged over the consumers (sequences) in the batch, with padded
steps masked out. Optimizers are Adam (beta1=0.9, beta2=0.999, bias
corrected) and RMSprop (rho=0.9); both use eps=1e-8 added after the square
root. Early stopping tracks validation AUC and restores the best epoch's
parameters.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import Tensor, as_tensor, clip, log, mul, no_grad, scale, sub, sum_all

CLAMP_EPS = 1e-12


class TrainingDiverged(RuntimeError):
    """Raised when a batch produces a non-finite loss."""


# ---------------------------------------------------------------------------
# scalar losses (reporting and tests)

def bce(y_hat, y):
    """Binary cross-entropy of one clamped prediction against a 0/1 label."""
    p = min(max(float(y_hat), CLAMP_EPS), 1.0 - CLAMP_EPS)
    y = float(y)
    return -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))


def conditional_loss(out, y, r):
    """Scalar conditional loss for one step.

    `out` maps y_hat, y_a, y_w (and y_b) to floats; y is the 0/1 default
    label and r the realized repayment ratio in [0, 1].
    """
    y = float(y)
    base = bce(out["y_hat"], y)
    if_default = y * (1.0 - out["y_a"]) * (1.0 - out["y_w"])
    if_repaid = (1.0 - y) * (out["y_a"] ** 2 + (r - out["y_w"]) ** 2)
    return base + if_default + if_repaid


# ---------------------------------------------------------------------------
# batched losses on the graph

def _bce_row(y_hat_row, y_row):
    """(1, B) elementwise bce; y_row is a constant 0/1 row."""
    ones = as_tensor(np.ones(y_row.shape))
    y = as_tensor(y_row)
    p = clip(y_hat_row, CLAMP_EPS, 1.0 - CLAMP_EPS)
    return scale(mul(y, log(p)) + mul(sub(ones, y), log(sub(ones, p))), -1.0)


def _conditional_row(row, y_row, r_row):
    ones = as_tensor(np.ones(y_row.shape))
    y = as_tensor(y_row)
    r = as_tensor(r_row)
    base = _bce_row(row["y_hat"], y_row)
    comp = mul(y, mul(sub(ones, row["y_a"]), sub(ones, row["y_w"])))
    gap = sub(r, row["y_w"])
    held = mul(sub(ones, y), mul(row["y_a"], row["y_a"]) + mul(gap, gap))
    return base + comp + held


def batch_loss(model, batch, loss_kind="bce"):
    """Masked per-step loss summed over steps, averaged over sequences."""
    rows = model.forward_rows(batch)
    mask = batch.label_mask
    n = mask.shape[0]
    total = None
    for i, row in enumerate(rows):
        y_row = batch.y[:, i].reshape(1, -1)
        if loss_kind == "bce":
            step_loss = _bce_row(row["y_hat"], y_row)
        elif loss_kind == "conditional":
            if "y_a" not in row:
                raise ValueError("conditional loss needs a decomposed head")
            step_loss = _conditional_row(row, y_row, batch.r[:, i].reshape(1, -1))
        else:
            raise ValueError("unknown loss %r" % (loss_kind,))
        term = sum_all(mul(step_loss, as_tensor(mask[:, i].reshape(1, -1))))
        total = term if total is None else total + term
    return scale(total, 1.0 / n)


# ---------------------------------------------------------------------------
# optimizers

@dataclass
class OptState:
    kind: str
    lr: float
    t: int = 0
    slots: dict = field(default_factory=dict)


def init_optimizer(kind, lr):
    if kind not in ("adam", "rmsprop"):
        raise ValueError("unknown optimizer %r" % (kind,))
    return OptState(kind=kind, lr=lr)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
RMS_RHO = 0.9
OPT_EPS = 1e-8


def optimizer_step(state, params, grads):
    """Apply one update in place; per-coordinate, so name order is irrelevant."""
    state.t += 1
    for name, p in params:
        g = grads[name].value
        if state.kind == "adam":
            m, v = state.slots.get(name, (np.zeros(g.shape), np.zeros(g.shape)))
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
            state.slots[name] = (m, v)
            m_hat = m / (1.0 - ADAM_BETA1 ** state.t)
            v_hat = v / (1.0 - ADAM_BETA2 ** state.t)
            p.value = p.value - state.lr * m_hat / (np.sqrt(v_hat) + OPT_EPS)
        else:
            s = state.slots.get(name, np.zeros(g.shape))
            s = RMS_RHO * s + (1.0 - RMS_RHO) * g * g
            state.slots[name] = s
            p.value = p.value - state.lr * g / (np.sqrt(s) + OPT_EPS)


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainingConfig:
    optimizer: str = "adam"
    lr: float = 0.001
    batch_size: int = 1000
    max_epochs: int = 50
    patience: int = 5
    loss: str = "bce"
    seed: int = 0


@dataclass
class TrainResult:
    history: list          # rows of (epoch, train_loss, val_loss, val_auc)
    best_epoch: int
    best_val_auc: float


def _val_auc(model, batch):
    from .evaluation import auc, pooled_scores
    pred = model.predict(batch)
    scores, labels = pooled_scores(pred["y_hat"], batch.y, batch.label_mask)
    return auc(scores, labels)


def train(model, train_batch, val_batch, cfg):
    """Minibatch training with AUC-based early stopping.

    Shuffles sequences each epoch, applies the configured optimizer, and
    evaluates the validation AUC after every epoch. Stops once the AUC has
    not improved for `patience` consecutive epochs and restores the
    parameters of the best epoch. Non-finite losses abort immediately.
    """
    from .data import subset_batch
    from .numerics import Rng, backward

    opt = init_optimizer(cfg.optimizer, cfg.lr)
    rng = Rng(cfg.seed).child(7)
    n = train_batch.label_mask.shape[0]
    history = []
    best = (-1.0, -1, None)  # (auc, epoch, values)
    stall = 0
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(n)
        epoch_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            mini = subset_batch(train_batch, idx)
            loss = batch_loss(model, mini, cfg.loss)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    "non-finite loss %r in epoch %d, batch starting at %d"
                    % (value, epoch, start))
            epoch_sum += value * len(idx)
            grads = backward(loss)
            named = _named_grads(model.params, grads)
            optimizer_step(opt, model.params, named)
        with no_grad():
            val_loss = batch_loss(model, val_batch, cfg.loss).item()
        val_auc = _val_auc(model, val_batch)
        history.append((epoch, epoch_sum / n, val_loss, val_auc))
        if val_auc > best[0]:
            best = (val_auc, epoch, model.params.copy_values())
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break
    if best[2] is not None:
        model.params.load_values(best[2])
    return TrainResult(history=history, best_epoch=best[1], best_val_auc=best[0])


class _NamedGrads:
    """Read-only name -> gradient view used by optimizer_step."""

    def __init__(self, mapping):
        self._m = mapping

    def __getitem__(self, name):
        return self._m[name]


def _named_grads(params, leaf_grads):
    out = {}
    for name, t in params:
        g = leaf_grads.get(t)
        out[name] = Tensor(g if g is not None else np.zeros(t.value.shape))
    return _NamedGrads(out)
