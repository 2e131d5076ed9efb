"""Recurrent cells with four treatments of inter-event elapsed time.

All four cells share the same gated update: input/forget/output gates and a
candidate memory computed from the current input and previous hidden state.
They differ only in what happens with the elapsed time dt since the previous
event:

- lstm: ignores dt (a zero is appended in the reserved input slot);
- lstm_w_dt: appends dt as an extra input feature;
- tlstm: splits the cell memory into a short-term part (a learned tanh
  projection) and the long-term remainder, discounts only the short-term
  part by a fixed decreasing function of dt, and recombines;
- tva_lstm: lifts each memory entry into d_m latent risk channels, applies a
  learned per-channel discount exp(tanh(W_R dt + B_R)) that can decay or
  grow with dt depending on the sign of W_R, and projects back.

Steps are batched column-wise: states are (d_h, B) with one column per
sequence, inputs are (d_x, B), and dt is a float or a (1, B) row of
non-negative raw elapsed times.
"""

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .numerics import (DomainError, Tensor, as_tensor, concat_rows, exp, kron,
                       matmul, mul, reshape, sigmoid, tanh, tile_cols,
                       tile_rows, transpose)


@dataclass
class CellState:
    """Hidden state h and memory c, each (d_h, B)."""
    h: Tensor
    c: Tensor


@dataclass
class LstmParams:
    d_x: int
    d_h: int
    uses_dt: bool
    W_i: Tensor
    W_f: Tensor
    W_o: Tensor
    W_c: Tensor
    U_i: Tensor
    U_f: Tensor
    U_o: Tensor
    U_c: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor
    b_c: Tensor


def short_term_discount(dt):
    """Default memory discount 1 / log(e + dt): equals 1 at dt=0, decreasing."""
    return 1.0 / np.log(np.e + dt)


@dataclass
class TlstmParams:
    base: LstmParams
    W_D: Tensor
    b_D: Tensor
    discount: callable = field(default=short_term_discount)


@dataclass
class TvaLstmParams:
    base: LstmParams
    d_m: int
    w_H: Tensor  # (1, d_m) lift weights
    B_H: Tensor  # (d_h, d_m)
    W_R: Tensor  # (d_h, d_m) per-channel time sensitivity
    B_R: Tensor  # (d_h, d_m)
    B_D: Tensor  # (d_h, d_m)
    w_L: Tensor  # (d_m, 1) channel mixing back to one memory entry
    b_L: Tensor  # (d_h, 1)


def init_lstm_params(ps, rng, d_x, d_h, uses_dt=False, prefix="lstm"):
    """Gate kernels uniform in [-r, r] with r = 1/sqrt(fan-in); zero biases."""
    rw = 1.0 / np.sqrt(d_x + 1)
    ru = 1.0 / np.sqrt(d_h)

    def kernel(name, r, rows, cols):
        return ps.add(prefix + "." + name, rng.uniform(-r, r, rows, cols))

    def bias(name):
        return ps.add(prefix + "." + name, np.zeros((d_h, 1)))

    return LstmParams(
        d_x=d_x, d_h=d_h, uses_dt=uses_dt,
        W_i=kernel("W_i", rw, d_h, d_x + 1), W_f=kernel("W_f", rw, d_h, d_x + 1),
        W_o=kernel("W_o", rw, d_h, d_x + 1), W_c=kernel("W_c", rw, d_h, d_x + 1),
        U_i=kernel("U_i", ru, d_h, d_h), U_f=kernel("U_f", ru, d_h, d_h),
        U_o=kernel("U_o", ru, d_h, d_h), U_c=kernel("U_c", ru, d_h, d_h),
        b_i=bias("b_i"), b_f=bias("b_f"), b_o=bias("b_o"), b_c=bias("b_c"))


def init_tlstm_params(ps, rng, d_x, d_h, prefix="tlstm"):
    base = init_lstm_params(ps, rng, d_x, d_h, uses_dt=False, prefix=prefix)
    r = 1.0 / np.sqrt(d_h)
    return TlstmParams(
        base=base,
        W_D=ps.add(prefix + ".W_D", rng.uniform(-r, r, d_h, d_h)),
        b_D=ps.add(prefix + ".b_D", np.zeros((d_h, 1))))


def init_tva_lstm_params(ps, rng, d_x, d_h, d_m=8, prefix="tva"):
    base = init_lstm_params(ps, rng, d_x, d_h, uses_dt=False, prefix=prefix)
    rl = 1.0 / np.sqrt(d_m)
    return TvaLstmParams(
        base=base, d_m=d_m,
        w_H=ps.add(prefix + ".w_H", rng.uniform(-1.0, 1.0, 1, d_m)),
        B_H=ps.add(prefix + ".B_H", np.zeros((d_h, d_m))),
        W_R=ps.add(prefix + ".W_R", rng.uniform(-1.0, 1.0, d_h, d_m)),
        B_R=ps.add(prefix + ".B_R", np.zeros((d_h, d_m))),
        B_D=ps.add(prefix + ".B_D", np.zeros((d_h, d_m))),
        w_L=ps.add(prefix + ".w_L", rng.uniform(-rl, rl, d_m, 1)),
        b_L=ps.add(prefix + ".b_L", np.zeros((d_h, 1))))


def zero_state(d_h, batch=1):
    return CellState(nm.zeros(d_h, batch), nm.zeros(d_h, batch))


def _dt_row(dt, batch):
    """Normalize dt to a (1, B) float row and check non-negativity."""
    row = np.asarray(dt, dtype=np.float64).reshape(1, -1)
    if row.shape[1] == 1 and batch > 1:
        row = np.repeat(row, batch, axis=1)
    if row.shape != (1, batch):
        raise nm.ShapeError("dt row shape %s does not match batch %d"
                            % (row.shape, batch))
    if np.any(row < 0.0):
        raise DomainError("elapsed time must be non-negative")
    return row


def _gated_update(p, h_prev, c_eff, x, slot_row):
    """Shared gate arithmetic; c_eff is the (possibly discounted) memory."""
    batch = x.value.shape[1]
    xa = concat_rows([x, as_tensor(slot_row)])

    def gate(W, U, b, squash):
        return squash(matmul(W, xa) + matmul(U, h_prev) + tile_cols(b, batch))

    i = gate(p.W_i, p.U_i, p.b_i, sigmoid)
    f = gate(p.W_f, p.U_f, p.b_f, sigmoid)
    o = gate(p.W_o, p.U_o, p.b_o, sigmoid)
    c_hat = gate(p.W_c, p.U_c, p.b_c, tanh)
    c = mul(f, c_eff) + mul(i, c_hat)
    h = mul(o, tanh(c))
    return CellState(h, c)


def _check_step_shapes(p, state, x):
    if x.value.shape[0] != p.d_x:
        raise nm.ShapeError("input has %d rows, cell expects %d"
                            % (x.value.shape[0], p.d_x))
    if state.h.value.shape != state.c.value.shape:
        raise nm.ShapeError("state shapes differ: %s vs %s"
                            % (state.h.value.shape, state.c.value.shape))
    if state.h.value.shape != (p.d_h, x.value.shape[1]):
        raise nm.ShapeError("state shape %s does not match (d_h=%d, batch=%d)"
                            % (state.h.value.shape, p.d_h, x.value.shape[1]))


def lstm_step(p, state, x, dt=0.0):
    """One gated update; dt fills the reserved input slot iff p.uses_dt."""
    x = as_tensor(x)
    _check_step_shapes(p, state, x)
    batch = x.value.shape[1]
    row = _dt_row(dt, batch)
    slot = row if p.uses_dt else np.zeros((1, batch))
    return _gated_update(p, state.h, state.c, x, slot)


def tlstm_step(p, state, x, dt):
    """Discount the short-term memory component by discount(dt), then gate."""
    x = as_tensor(x)
    base = p.base
    _check_step_shapes(base, state, x)
    batch = x.value.shape[1]
    row = _dt_row(dt, batch)
    c_short = tanh(matmul(p.W_D, state.c) + tile_cols(p.b_D, batch))
    c_long = state.c - c_short
    g_row = p.discount(row)  # constant: no gradient flows through dt
    c_short_d = mul(c_short, tile_rows(as_tensor(g_row), base.d_h))
    c_eff = c_long + c_short_d
    return _gated_update(base, state.h, c_eff, x, np.zeros((1, batch)))


def tva_discount(p, c, dt):
    """Time-value adjustment of the memory c over elapsed time dt.

    Each memory entry is lifted into d_m latent channels (entry i, channel m
    carries tanh(c_i * w_H_m + B_H_im)), every channel is scaled by a learned
    discount factor exp(tanh(W_R_im dt + B_R_im)) in [1/e, e] that grows or
    decays with dt, and the channels are mixed back into one entry per row.
    """
    c = as_tensor(c)
    d_h, batch = c.value.shape
    d_m = p.d_m
    row = as_tensor(_dt_row(dt, batch))
    n = d_h * d_m

    # rows of the lifted matrices are laid out entry-major: row i*d_m + m
    lifted = kron(c, nm.ones(d_m, 1))
    w_col = kron(nm.ones(d_h, 1), transpose(p.w_H))
    pre = mul(lifted, tile_cols(w_col, batch)) + tile_cols(reshape(p.B_H, n, 1), batch)
    channels = tanh(pre)
    disc = exp(tanh(matmul(reshape(p.W_R, n, 1), row)
                    + tile_cols(reshape(p.B_R, n, 1), batch)))
    adjusted = tanh(mul(channels, disc) + tile_cols(reshape(p.B_D, n, 1), batch))
    mix = kron(nm.eye(d_h), transpose(p.w_L))  # (d_h, n), block i holds w_L
    return tanh(matmul(mix, adjusted) + tile_cols(p.b_L, batch))


def tva_lstm_step(p, state, x, dt):
    """Replace the memory with its time-value adjustment, then gate."""
    x = as_tensor(x)
    base = p.base
    _check_step_shapes(base, state, x)
    batch = x.value.shape[1]
    _dt_row(dt, batch)  # validates non-negativity
    c_eff = tva_discount(p, state.c, dt)
    return _gated_update(base, state.h, c_eff, x, np.zeros((1, batch)))


def step(params, state, x, dt):
    """Dispatch a step on the parameter struct's cell kind."""
    if isinstance(params, TvaLstmParams):
        return tva_lstm_step(params, state, x, dt)
    if isinstance(params, TlstmParams):
        return tlstm_step(params, state, x, dt)
    if isinstance(params, LstmParams):
        return lstm_step(params, state, x, dt)
    raise TypeError("unknown cell parameters: %r" % (type(params),))


def cell_width(params):
    return params.d_h if isinstance(params, LstmParams) else params.base.d_h


def cell_input_width(params):
    return params.d_x if isinstance(params, LstmParams) else params.base.d_x


CELL_KINDS = ("lstm", "lstm-w-dt", "tlstm", "tva")


def init_cell(ps, rng, kind, d_x, d_h, d_m=8, prefix="cell"):
    if kind == "lstm":
        return init_lstm_params(ps, rng, d_x, d_h, uses_dt=False, prefix=prefix)
    if kind == "lstm-w-dt":
        return init_lstm_params(ps, rng, d_x, d_h, uses_dt=True, prefix=prefix)
    if kind == "tlstm":
        return init_tlstm_params(ps, rng, d_x, d_h, prefix=prefix)
    if kind == "tva":
        return init_tva_lstm_params(ps, rng, d_x, d_h, d_m=d_m, prefix=prefix)
    raise ValueError("unknown cell kind %r" % (kind,))
