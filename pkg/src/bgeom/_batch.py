"""Padding helpers so vmapped kernels compile for a few batch sizes only."""

import numpy as np

BUCKETS = (1, 8, 32, 128, 512)


def bucket_size(n):
    for b in BUCKETS:
        if n <= b:
            return b
    return BUCKETS[-1]


def pad_rows(a, size):
    a = np.asarray(a)
    if a.shape[0] == size:
        return a
    reps = np.repeat(a[-1:], size - a.shape[0], axis=0)
    return np.concatenate([a, reps], axis=0)


def map_batched(kernel, xs, *args):
    """Apply a vmapped kernel over the rows of ``xs`` in padded chunks.

    ``kernel(xs_chunk, *args)`` must return an array or a tuple/list of
    arrays whose leading axis indexes the rows.
    """
    xs = np.asarray(xs, dtype=float)
    n = xs.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    chunk = BUCKETS[-1]
    pieces = []
    for start in range(0, n, chunk):
        part = xs[start:start + chunk]
        size = bucket_size(part.shape[0])
        out = kernel(pad_rows(part, size), *args)
        pieces.append(_take(out, part.shape[0]))
    return _concat(pieces)


def _take(out, k):
    import jax

    return jax.tree_util.tree_map(lambda a: np.asarray(a)[:k], out)


def _concat(pieces):
    import jax

    return jax.tree_util.tree_map(lambda *a: np.concatenate(a, axis=0), *pieces)


def map_tree(kernel, tree, *args):
    """Like :func:`map_batched` for a pytree of arrays sharing a leading axis."""
    import jax

    leaves, treedef = jax.tree_util.tree_flatten(tree)
    leaves = [np.asarray(a) for a in leaves]
    n = leaves[0].shape[0]
    if n == 0:
        raise ValueError("empty batch")
    chunk = BUCKETS[-1]
    pieces = []
    for start in range(0, n, chunk):
        part = [a[start:start + chunk] for a in leaves]
        k = part[0].shape[0]
        size = bucket_size(k)
        out = kernel(jax.tree_util.tree_unflatten(treedef, [pad_rows(a, size) for a in part]), *args)
        pieces.append(_take(out, k))
    return _concat(pieces)
