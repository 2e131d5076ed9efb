"""Fusion of per-loan features with order and session sub-sequence encodings.

Two fusers map the triple (loan vector l, order encoding ho, session
encoding hs) to a d_z factor vector:

- fc_fuse: a single squashed affine layer on the concatenation;
- mvm_fuse: an elementwise product of three affine maps, each taking one
  view with a constant 1 appended. Expanding the product shows it contains
  every cross-view interaction l_a * ho_b * hs_c plus all lower-order terms,
  so pairwise and three-way effects are representable without enumerating
  them.

Inputs are batched column-wise: (d, B) matrices.
"""

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .numerics import Tensor, as_tensor, concat_rows, matmul, mul, tanh, tile_cols


@dataclass
class FcFusionParams:
    d_z: int
    W_F: Tensor  # (d_z, d_l + d_ho + d_hs)
    b_F: Tensor  # (d_z, 1)


@dataclass
class MvmFusionParams:
    d_z: int
    U_l: Tensor  # (d_z, d_l + 1)
    U_o: Tensor  # (d_z, d_ho + 1)
    U_s: Tensor  # (d_z, d_hs + 1)


def init_fc_fusion(ps, rng, d_l, d_ho, d_hs, d_z, prefix="fuse"):
    d_in = d_l + d_ho + d_hs
    r = 1.0 / np.sqrt(d_in)
    return FcFusionParams(
        d_z=d_z,
        W_F=ps.add(prefix + ".W_F", rng.uniform(-r, r, d_z, d_in)),
        b_F=ps.add(prefix + ".b_F", np.zeros((d_z, 1))))


def init_mvm_fusion(ps, rng, d_l, d_ho, d_hs, d_z, prefix="fuse"):
    def factor(name, d_in):
        r = 1.0 / np.sqrt(d_in + 1)
        return ps.add(prefix + "." + name, rng.uniform(-r, r, d_z, d_in + 1))

    return MvmFusionParams(
        d_z=d_z,
        U_l=factor("U_l", d_l),
        U_o=factor("U_o", d_ho),
        U_s=factor("U_s", d_hs))


def _with_ones_row(x):
    x = as_tensor(x)
    return concat_rows([x, nm.ones(1, x.value.shape[1])])


def fc_fuse(p, loan, ho, hs):
    """z = tanh(W_F [l; ho; hs] + b_F), batched over columns."""
    loan, ho, hs = as_tensor(loan), as_tensor(ho), as_tensor(hs)
    batch = loan.value.shape[1]
    stacked = concat_rows([loan, ho, hs])
    if stacked.value.shape[0] != p.W_F.value.shape[1]:
        raise nm.ShapeError("fc_fuse got %d stacked rows, kernel expects %d"
                            % (stacked.value.shape[0], p.W_F.value.shape[1]))
    return tanh(matmul(p.W_F, stacked) + tile_cols(p.b_F, batch))


def mvm_fuse(p, loan, ho, hs):
    """z = (U_l [l; 1]) * (U_o [ho; 1]) * (U_s [hs; 1]), elementwise."""
    a = matmul(p.U_l, _with_ones_row(loan))
    b = matmul(p.U_o, _with_ones_row(ho))
    c = matmul(p.U_s, _with_ones_row(hs))
    return mul(mul(a, b), c)
