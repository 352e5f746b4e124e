"""Hot kernels: forced-value propagation over tabulated equations.

Everything expensive in this package reduces to one primitive: given a batch
of partial assignments (rows of range indices, -1 = unconstrained), look up
for each endogenous variable the value its equation is forced to take, using
per-variable "masked tables" indexed by (parent value + 1) with 0 meaning the
parent is unconstrained.

Two interchangeable backends implement the primitive:

* ``numba`` - @njit row loops; fastest for the many small batches issued by
  the witness/network searches.
* ``numpy`` - vectorized per-variable passes; used when numba is unavailable
  or when CAUSALQ_BACKEND=numpy is set.

``benchmarks/bench_backends.py`` compares the two.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        if args and callable(args[0]):
            return args[0]
        return wrap


def resolve_backend(name: str | None = None) -> str:
    """Pick the kernel backend: explicit arg > CAUSALQ_BACKEND > availability."""
    name = name or os.environ.get("CAUSALQ_BACKEND", "").strip().lower() or None
    if name is None:
        return "numba" if HAS_NUMBA else "numpy"
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r} (expected 'numba' or 'numpy')")
    if name == "numba" and not HAS_NUMBA:
        raise ValueError("numba backend requested but numba is not importable")
    return name


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

@njit(cache=True)
def _closure_nb(out, n_exo, parents_flat, parents_off, strides_flat, tables_flat,
                tables_off):
    n_rows, n_vars = out.shape
    n_endo = n_vars - n_exo
    for b in range(n_rows):
        for e in range(n_endo):
            v = n_exo + e
            if out[b, v] >= 0:
                continue
            idx = np.int64(0)
            for k in range(parents_off[e], parents_off[e + 1]):
                idx += strides_flat[k] * (out[b, parents_flat[k]] + 1)
            f = tables_flat[tables_off[e] + idx]
            if f >= 0:
                out[b, v] = f


@njit(cache=True)
def _local_nb(rows, out, n_exo, parents_flat, parents_off, strides_flat,
              tables_flat, tables_off):
    n_rows = rows.shape[0]
    n_endo = out.shape[1]
    for b in range(n_rows):
        for e in range(n_endo):
            idx = np.int64(0)
            for k in range(parents_off[e], parents_off[e + 1]):
                idx += strides_flat[k] * (rows[b, parents_flat[k]] + 1)
            out[b, e] = tables_flat[tables_off[e] + idx]


def closure_numba(rows, packed):
    out = rows.copy()
    _closure_nb(out, packed.n_exo, packed.parents_flat, packed.parents_off,
                packed.strides_flat, packed.tables_flat, packed.tables_off)
    return out


def local_numba(rows, packed):
    out = np.empty((rows.shape[0], packed.n_endo), dtype=np.int16)
    _local_nb(rows, out, packed.n_exo, packed.parents_flat, packed.parents_off,
              packed.strides_flat, packed.tables_flat, packed.tables_off)
    return out


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------

def closure_numpy(rows, packed):
    out = rows.copy()
    n_exo = packed.n_exo
    for e in range(packed.n_endo):
        v = n_exo + e
        lo, hi = packed.parents_off[e], packed.parents_off[e + 1]
        pa = packed.parents_flat[lo:hi]
        st = packed.strides_flat[lo:hi]
        idx = (out[:, pa].astype(np.int64) + 1) @ st
        forced = packed.tables_flat[packed.tables_off[e] + idx]
        free = out[:, v] < 0
        np.copyto(out[:, v], forced, where=free & (forced >= 0))
    return out


def local_numpy(rows, packed):
    out = np.empty((rows.shape[0], packed.n_endo), dtype=np.int16)
    for e in range(packed.n_endo):
        lo, hi = packed.parents_off[e], packed.parents_off[e + 1]
        pa = packed.parents_flat[lo:hi]
        st = packed.strides_flat[lo:hi]
        idx = (rows[:, pa].astype(np.int64) + 1) @ st
        out[:, e] = packed.tables_flat[packed.tables_off[e] + idx]
    return out


BACKENDS = {
    "numba": (closure_numba, local_numba),
    "numpy": (closure_numpy, local_numpy),
}
