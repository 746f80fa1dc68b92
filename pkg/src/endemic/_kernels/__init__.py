"""Hot loops for graph sampling.

The compiled extension is used when it was built; otherwise the pure-Python
implementation is selected. Set ``ENDEMIC_PURE_PYTHON=1`` to force the
fallback.
"""
import os

import numpy as np

from . import _pure

BACKEND = "python"
_impl = _pure

if os.environ.get("ENDEMIC_PURE_PYTHON") != "1":
    try:
        from . import _walks as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pure


def teleport_walks(indptr, indices, starts, length, teleport, coins, picks, backend=None):
    """Run teleporting random walks over a CSR adjacency.

    ``coins`` and ``picks`` are uniforms in [0, 1) of shape
    ``(len(starts), length)``. At step ``s`` of walk ``w`` the walker jumps to
    node ``floor(picks * n_nodes)`` when ``coins < teleport`` or the current
    node has no neighbours, and otherwise to neighbour ``floor(picks * deg)``.
    Returns an int64 array of shape ``(len(starts), length + 1)`` whose first
    column is ``starts``.
    """
    impl = _select(backend)
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    shape = (len(starts), int(length))
    coins = np.ascontiguousarray(coins, dtype=np.float64).reshape(shape)
    picks = np.ascontiguousarray(picks, dtype=np.float64).reshape(shape)
    return impl.teleport_walks(
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(indices, dtype=np.int64),
        starts,
        int(length),
        float(teleport),
        coins,
        picks,
    )


def cooccurrence_pairs(walks, window, backend=None):
    """Ordered (centre, context) pairs within ``window`` positions, self-pairs dropped."""
    impl = _select(backend)
    walks = np.ascontiguousarray(walks, dtype=np.int64)
    if walks.ndim != 2:
        raise ValueError(f"walks must be 2-D, got shape {walks.shape}")
    return impl.cooccurrence_pairs(walks, int(window))


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _pure
    if backend == "cython":
        if BACKEND != "cython":
            raise RuntimeError("compiled kernels are not available in this install")
        return _impl
    raise ValueError(f"unknown backend {backend!r}")
