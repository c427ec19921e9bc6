# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled Gibbs sweep kernels.

Semantics match hmrf_fdr._kernels_py exactly (same update rule, same float
operations, compiled with FP contraction off), so chains are bit-identical
across backends for a fixed seed.
"""

import numpy as np

cimport numpy as cnp


def sweep_raster(cnp.uint8_t[::1] vext, cnp.int32_t[:, ::1] nbr, double beta,
                 double[::1] hs, double[::1] eta):
    """One systematic-scan sweep updating sites 0..N-1 in order, in place."""
    cdef Py_ssize_t n = nbr.shape[0]
    cdef Py_ssize_t s
    cdef long nsum
    for s in range(n):
        nsum = (vext[nbr[s, 0]] + vext[nbr[s, 1]] + vext[nbr[s, 2]]
                + vext[nbr[s, 3]] + vext[nbr[s, 4]] + vext[nbr[s, 5]])
        vext[s] = 1 if eta[s] < beta * nsum + hs[s] else 0


def sweep_color(cnp.uint8_t[::1] vext, cnp.int32_t[:, ::1] nbr, double beta,
                double[::1] hs, double[::1] eta, cnp.int32_t[::1] sites):
    """Update one checkerboard color class, in place."""
    cdef Py_ssize_t k
    cdef Py_ssize_t m = sites.shape[0]
    cdef cnp.int32_t s
    cdef long nsum
    for k in range(m):
        s = sites[k]
        nsum = (vext[nbr[s, 0]] + vext[nbr[s, 1]] + vext[nbr[s, 2]]
                + vext[nbr[s, 3]] + vext[nbr[s, 4]] + vext[nbr[s, 5]])
        vext[s] = 1 if eta[s] < beta * nsum + hs[s] else 0


def field_stats(cnp.uint8_t[::1] vext, cnp.int32_t[:, ::1] nbr):
    """(2*pair_sum, site_sum) of the current state; integers, exact."""
    cdef Py_ssize_t n = nbr.shape[0]
    cdef Py_ssize_t s
    cdef long pair2 = 0
    cdef long site = 0
    for s in range(n):
        if vext[s]:
            pair2 += (vext[nbr[s, 0]] + vext[nbr[s, 1]] + vext[nbr[s, 2]]
                      + vext[nbr[s, 3]] + vext[nbr[s, 4]] + vext[nbr[s, 5]])
            site += 1
    return pair2, site
