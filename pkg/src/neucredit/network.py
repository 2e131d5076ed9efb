"""Sequence models over consumer credit histories.

Two architectures share the same cells and prediction heads:

- SequenceModel: one cell over a single event stream, emitting a default
  probability at every valid step. Used for flat benchmark sequences and
  for the loan-only view of consumer data.
- HierarchicalModel: per loan, two bottom-level cells encode the order and
  session sub-sequences observed since the previous loan; the encodings are
  fused with the loan's own features into a factor vector that drives an
  up-level cell across the loan sequence. Heads read the up-level hidden
  state at each loan step.

Feature conventions: raw event vectors carry the elapsed-time interval in
column 0. Cells never see that column as an input feature; it is split out
and routed to each cell's time path (appended slot or discount). Fusion, by
contrast, receives the full loan vector including the standardized interval.

The decomposed head splits the hidden state into ability and willingness
projections plus the residual h_b = h - h_a - h_w, scores each part with its
own logistic readout, and multiplies the three probabilities, mirroring a
chain of conditional default factors.
"""

from dataclasses import dataclass, field, asdict

import numpy as np

from . import cells, fusion, numerics as nm
from .cells import CellState, step, zero_state
from .numerics import (ParamSet, Rng, Tensor, as_tensor, matmul, mul, no_grad,
                       put_cols, select, sigmoid, sub, take_cols, tanh,
                       tile_cols)


# ---------------------------------------------------------------------------
# heads

@dataclass
class PlainHeadParams:
    w_P: Tensor
    b_P: Tensor


@dataclass
class DecomposedHeadParams:
    W_A: Tensor
    b_A: Tensor
    W_W: Tensor
    b_W: Tensor
    w_a: Tensor
    b_a: Tensor
    w_w: Tensor
    b_w: Tensor
    w_b: Tensor
    b_b: Tensor


def init_plain_head(ps, rng, d_h, prefix="head"):
    r = 1.0 / np.sqrt(d_h)
    return PlainHeadParams(
        w_P=ps.add(prefix + ".w_P", rng.uniform(-r, r, 1, d_h)),
        b_P=ps.add(prefix + ".b_P", np.zeros((1, 1))))


def init_decomposed_head(ps, rng, d_h, prefix="head"):
    r = 1.0 / np.sqrt(d_h)

    def kernel(name, rows, cols):
        return ps.add(prefix + "." + name, rng.uniform(-r, r, rows, cols))

    def bias(name, rows):
        return ps.add(prefix + "." + name, np.zeros((rows, 1)))

    return DecomposedHeadParams(
        W_A=kernel("W_A", d_h, d_h), b_A=bias("b_A", d_h),
        W_W=kernel("W_W", d_h, d_h), b_W=bias("b_W", d_h),
        w_a=kernel("w_a", 1, d_h), b_a=bias("b_a", 1),
        w_w=kernel("w_w", 1, d_h), b_w=bias("b_w", 1),
        w_b=kernel("w_b", 1, d_h), b_b=bias("b_b", 1))


def plain_head(p, h):
    """Default probability row (1, B) from hidden columns h (d, B)."""
    batch = h.value.shape[1]
    return {"y_hat": sigmoid(matmul(p.w_P, h) + tile_cols(p.b_P, batch))}


def decompose_state(p, h):
    """Split h into ability, willingness, and behavioral-residual parts.

    h_b is the exact residual h - h_a - h_w (no squashing), so the three
    parts always sum back to h.
    """
    batch = h.value.shape[1]
    h_a = tanh(matmul(p.W_A, h) + tile_cols(p.b_A, batch))
    h_w = tanh(matmul(p.W_W, h) + tile_cols(p.b_W, batch))
    h_b = sub(sub(h, h_a), h_w)
    return h_a, h_w, h_b


def decomposed_head(p, h):
    """Probability rows for the three risk factors and their product."""
    batch = h.value.shape[1]
    h_a, h_w, h_b = decompose_state(p, h)

    def readout(w, b, part):
        return sigmoid(matmul(w, part) + tile_cols(b, batch))

    y_a = readout(p.w_a, p.b_a, h_a)
    y_w = readout(p.w_w, p.b_w, h_w)
    y_b = readout(p.w_b, p.b_b, h_b)
    return {"y_hat": mul(mul(y_a, y_w), y_b), "y_a": y_a, "y_w": y_w, "y_b": y_b}


def apply_head(head_params, h):
    if isinstance(head_params, DecomposedHeadParams):
        return decomposed_head(head_params, h)
    return plain_head(head_params, h)


# ---------------------------------------------------------------------------
# masked unrolling

def _mask_rows(mask_col, rows):
    """(B,) 0/1 mask -> (rows, B) constant matrix for select()."""
    return np.repeat(mask_col.reshape(1, -1), rows, axis=0)


def unroll(cell_params, feats, dts, mask, collect=False):
    """Run a cell across a batch of padded sequences.

    feats: (N, T, d_in) with the interval column already removed;
    dts: (N, T) raw non-negative elapsed times; mask: (N, T) 0/1 with valid
    steps forming a prefix. Masked steps leave the state bit-identical.
    Returns the final CellState, plus the list of per-step hidden tensors
    when collect is set.
    """
    n, t_max, _ = feats.shape
    d_h = cells.cell_width(cell_params)
    state = zero_state(d_h, n)
    hs = []
    for t in range(t_max):
        x_t = as_tensor(np.ascontiguousarray(feats[:, t, :].T))
        stepped = step(cell_params, state, x_t, dts[:, t].reshape(1, -1))
        m = _mask_rows(mask[:, t], d_h)
        state = CellState(select(m, stepped.h, state.h),
                          select(m, stepped.c, state.c))
        if collect:
            hs.append(state.h)
    return (state, hs) if collect else state


def encode_subsequence(cell_params, seq, dts, mask):
    """Encode one padded sub-sequence into its final hidden column.

    seq: (T, d_in) rows of cell-ready features; dts, mask: length T.
    An all-masked sequence returns the zero initial state.
    """
    seq = np.asarray(seq, dtype=np.float64)
    dts = np.asarray(dts, dtype=np.float64).reshape(1, -1)
    mask = np.asarray(mask, dtype=np.float64).reshape(1, -1)
    state = unroll(cell_params, seq[None, :, :], dts, mask)
    return state.h


# ---------------------------------------------------------------------------
# configs

@dataclass
class FlatConfig:
    """Single-stream model: d_in counts raw columns including the interval."""
    d_in: int
    d_h: int
    cell: str = "tva"
    d_m: int = 8
    head: str = "plain"
    max_len: int = 15

    def to_dict(self):
        d = asdict(self)
        d["architecture"] = "flat"
        return d


@dataclass
class NetworkConfig:
    """Hierarchical model over loan, order, and session streams."""
    d_l: int = 15
    d_o: int = 45
    d_s: int = 16
    d_ho: int = 5
    d_hs: int = 5
    d_hl: int = 5
    d_z: int = 5
    d_m: int = 8
    max_loans: int = 15
    max_events: int = 15
    view: str = "all"            # all | order | session
    fusion: str = "mvm"          # fc | mvm | none
    head: str = "plain"          # plain | decomposed
    cell_loans: str = "tva"
    cell_orders: str = "tva"
    cell_sessions: str = "tva"

    def to_dict(self):
        d = asdict(self)
        d["architecture"] = "hierarchical"
        return d


def config_from_dict(d):
    d = dict(d)
    arch = d.pop("architecture")
    if arch == "flat":
        return FlatConfig(**d)
    if arch == "hierarchical":
        return NetworkConfig(**d)
    raise ValueError("unknown architecture %r" % (arch,))


# ---------------------------------------------------------------------------
# models

class SequenceModel:
    """One cell over a single stream with a head at every step."""

    def __init__(self, config, seed=0, params=None):
        self.config = config
        self.params = params if params is not None else ParamSet()
        rng = Rng(seed)
        self.cell = cells.init_cell(self.params, rng.child(1), config.cell,
                                    config.d_in - 1, config.d_h,
                                    d_m=config.d_m, prefix="cell")
        if config.head == "decomposed":
            self.head = init_decomposed_head(self.params, rng.child(2), config.d_h)
        else:
            self.head = init_plain_head(self.params, rng.child(2), config.d_h)

    def forward_rows(self, batch):
        """Per-step head outputs: list over t of dicts of (1, B) tensors."""
        feats = batch.feats[:, :, 1:]
        _, hs = unroll(self.cell, feats, batch.dts, batch.mask, collect=True)
        return [apply_head(self.head, h) for h in hs]

    def predict(self, batch):
        with no_grad():
            rows = self.forward_rows(batch)
        return _stack_rows(rows, batch.mask)


class HierarchicalModel:
    """Bottom-level encoders per loan, fused into an up-level loan cell."""

    def __init__(self, config, seed=0, params=None):
        self.config = config
        self.params = params if params is not None else ParamSet()
        rng = Rng(seed)
        c = config
        self.order_cell = None
        self.session_cell = None
        if c.view in ("all", "order"):
            self.order_cell = cells.init_cell(self.params, rng.child(1),
                                              c.cell_orders, c.d_o - 1, c.d_ho,
                                              d_m=c.d_m, prefix="orders")
        if c.view in ("all", "session"):
            self.session_cell = cells.init_cell(self.params, rng.child(2),
                                                c.cell_sessions, c.d_s - 1, c.d_hs,
                                                d_m=c.d_m, prefix="sessions")
        if c.view == "all":
            if c.fusion == "fc":
                self.fuser = fusion.init_fc_fusion(self.params, rng.child(3),
                                                   c.d_l, c.d_ho, c.d_hs, c.d_z)
            elif c.fusion == "mvm":
                self.fuser = fusion.init_mvm_fusion(self.params, rng.child(3),
                                                    c.d_l, c.d_ho, c.d_hs, c.d_z)
            else:
                raise ValueError("view 'all' needs fusion 'fc' or 'mvm'")
            up_width = c.d_z
        elif c.view == "order":
            self.fuser = None
            up_width = c.d_ho
        elif c.view == "session":
            self.fuser = None
            up_width = c.d_hs
        else:
            raise ValueError("unknown view %r" % (c.view,))
        # the up-level input is a fused factor vector with no interval column,
        # so the cell takes it whole; the loan interval drives its time path
        self.loan_cell = cells.init_cell(self.params, rng.child(4), c.cell_loans,
                                         up_width, c.d_hl, d_m=c.d_m, prefix="loans")
        self._up_width = up_width
        if c.head == "decomposed":
            self.head = init_decomposed_head(self.params, rng.child(5), c.d_hl)
        else:
            self.head = init_plain_head(self.params, rng.child(5), c.d_hl)

    def _encode_stream(self, cell_params, feats4, dts3, mask3, loan_mask):
        """Encode every valid loan's sub-sequence: returns (d_h, B * max_loans).

        Only columns of valid loan slots enter the cell, so the batch the
        cell sees is identical however many padded loan slots surround them;
        encodings are scattered back to full width with zeros elsewhere.
        """
        n, n_loans, t_max, d = feats4.shape
        flat_feats = feats4.reshape(n * n_loans, t_max, d)
        flat_dts = dts3.reshape(n * n_loans, t_max)
        flat_mask = mask3.reshape(n * n_loans, t_max)
        valid = np.flatnonzero(loan_mask.reshape(-1) > 0.0)
        state = unroll(cell_params, np.ascontiguousarray(flat_feats[valid, :, 1:]),
                       flat_dts[valid], flat_mask[valid])
        return put_cols(state.h, valid, n * n_loans)

    def forward_rows(self, batch):
        """Per-loan-step head outputs: list over i of dicts of (1, B) rows."""
        c = self.config
        n, n_loans = batch.loan_mask.shape
        ho_all = hs_all = None
        if self.order_cell is not None:
            ho_all = self._encode_stream(self.order_cell, batch.order_feats,
                                         batch.order_dts, batch.order_mask,
                                         batch.loan_mask)
        if self.session_cell is not None:
            hs_all = self._encode_stream(self.session_cell, batch.session_feats,
                                         batch.session_dts, batch.session_mask,
                                         batch.loan_mask)
        state = zero_state(c.d_hl, n)
        rows = []
        for i in range(n_loans):
            cols = np.arange(n) * n_loans + i
            if c.view == "all":
                loan_i = as_tensor(np.ascontiguousarray(batch.loan_feats[:, i, :].T))
                ho_i = take_cols(ho_all, cols)
                hs_i = take_cols(hs_all, cols)
                if isinstance(self.fuser, fusion.MvmFusionParams):
                    z = fusion.mvm_fuse(self.fuser, loan_i, ho_i, hs_i)
                else:
                    z = fusion.fc_fuse(self.fuser, loan_i, ho_i, hs_i)
            elif c.view == "order":
                z = take_cols(ho_all, cols)
            else:
                z = take_cols(hs_all, cols)
            stepped = step(self.loan_cell, state, z, batch.loan_dts[:, i].reshape(1, -1))
            m = _mask_rows(batch.loan_mask[:, i], c.d_hl)
            state = CellState(select(m, stepped.h, state.h),
                              select(m, stepped.c, state.c))
            rows.append(apply_head(self.head, state.h))
        return rows

    def predict(self, batch):
        with no_grad():
            rows = self.forward_rows(batch)
        return _stack_rows(rows, batch.loan_mask)


def _stack_rows(rows, mask):
    """Stack per-step (1, B) head rows into (B, T) arrays plus the mask."""
    out = {}
    for key in rows[0]:
        out[key] = np.concatenate([r[key].value for r in rows], axis=0).T.copy()
    out["mask"] = mask.copy()
    return out


def build_model(config, seed=0):
    if isinstance(config, FlatConfig):
        return SequenceModel(config, seed=seed)
    if isinstance(config, NetworkConfig):
        return HierarchicalModel(config, seed=seed)
    raise TypeError("unknown config %r" % (type(config),))
