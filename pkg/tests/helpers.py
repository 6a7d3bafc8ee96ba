"""Shared builders and independent numeric oracles for the test suite.

Everything here recomputes expected values from first principles (dense
numpy linear algebra, grid searches) so the library is checked against an
implementation that shares none of its code paths.
"""

import numpy as np

from mmadmm.blockspace import DenseMatrixOp, ScaledIdentityOp
from mmadmm.problems import ProblemSpec
from mmadmm.prox import ProxFunction


def l1_toy():
    """min |x1| + |x2| s.t. x1 + x2 = 2: optimal value 2, multiplier -1."""
    ops = (ScaledIdentityOp(1.0, (1,)), ScaledIdentityOp(1.0, (1,)))
    rows = [(ops, np.array([2.0]))]
    terms = (ProxFunction("l1"), ProxFunction("l1"))
    return ProblemSpec("l1-toy", rows, ((1,), (1,)), terms)


def quad_problem(seed=0, d=6, dims=(3, 4), weights=(1.0, 2.0)):
    """Strongly convex blocks (w_i/2)||x_i||^2 under dense Gaussian coupling."""
    rng = np.random.default_rng(seed)
    ops = tuple(DenseMatrixOp(rng.standard_normal((d, m))) for m in dims)
    b = rng.standard_normal(d)
    rows = [(ops, b)]
    terms = tuple(ProxFunction("sq-frobenius", w) for w in weights)
    return ProblemSpec(
        "quad", rows, tuple((m,) for m in dims), terms
    )


def op_dense(op):
    """Materialize a block operator column by column."""
    m = int(np.prod(op.in_shape)) if op.in_shape else 1
    d = int(np.prod(op.out_shape)) if op.out_shape else 1
    cols = np.zeros((d, m))
    e = np.zeros(m)
    for j in range(m):
        e[:] = 0.0
        e[j] = 1.0
        cols[:, j] = op.apply(e.reshape(op.in_shape)).ravel()
    return cols


def family_dense(A):
    """Dense matrix of a whole operator family, blocks side by side."""
    return np.hstack([op_dense(op) for op in A.operators])


def flatten_blocks(x):
    """Concatenate the blocks of a BlockVector into one flat vector."""
    return np.concatenate([blk.ravel() for blk in x.blocks])


def grid_min_1d(objective, lo=-10.0, hi=10.0, step=1e-4):
    """Argmin of a vectorized scalar objective over a uniform grid."""
    xs = np.arange(lo, hi + step, step)
    vals = objective(xs)
    return float(xs[np.argmin(vals)])


def refine_min(objective, lo, hi, steps=201, rounds=4):
    """Shrinking multi-round grid search over a box in R^k.

    ``objective`` maps an array of shape (k,) to a scalar. Each round zooms
    into one grid cell around the incumbent, so the final resolution is
    roughly ``(hi - lo) / steps**rounds`` per coordinate.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    k = lo.size
    best = None
    for _ in range(rounds):
        axes = [np.linspace(lo[i], hi[i], steps) for i in range(k)]
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        vals = np.array([objective(p) for p in pts])
        best = pts[int(np.argmin(vals))]
        spans = (hi - lo) / (steps - 1)
        lo = best - spans
        hi = best + spans
    return best


def random_blocks(rng, shapes, scale=1.0):
    """List of random dense arrays matching the given shapes."""
    return [scale * rng.standard_normal(s) for s in shapes]
