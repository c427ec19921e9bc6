"""Pure-numpy Gibbs sweep kernels (fallback for the compiled extension).

Both backends receive per-site acceptance thresholds ``eta`` (logits of
pre-drawn uniforms) and flip site s to 1 iff ``eta[s] < beta*nbr_sum + hs[s]``.
Keeping the exp/log work outside the kernels makes the two backends
bit-identical: the inner loop is only integer sums, one multiply, one add,
and one compare, all exact IEEE-754 double operations.

``vext`` is the state vector padded with one trailing zero slot addressed by
the neighbor sentinel, so absent neighbors contribute 0 to neighbor sums.
"""

import numpy as np


def sweep_raster(vext, nbr, beta, hs, eta):
    """One systematic-scan sweep updating sites 0..N-1 in order, in place."""
    n = nbr.shape[0]
    for s in range(n):
        nsum = int(vext[nbr[s, 0]]) + int(vext[nbr[s, 1]]) + int(vext[nbr[s, 2]]) \
            + int(vext[nbr[s, 3]]) + int(vext[nbr[s, 4]]) + int(vext[nbr[s, 5]])
        vext[s] = 1 if eta[s] < beta * nsum + hs[s] else 0


def sweep_color(vext, nbr, beta, hs, eta, sites):
    """Update one checkerboard color class, in place.

    Same-color sites are never neighbors, so the simultaneous vectorized
    update equals a sequential single-site scan over the class.
    """
    nsum = vext[nbr[sites]].sum(axis=1, dtype=np.int64)
    vext[sites] = eta[sites] < beta * nsum + hs[sites]


def field_stats(vext, nbr):
    """(2*pair_sum, site_sum) of the current state; integers, exact."""
    n = nbr.shape[0]
    values = vext[:n].astype(np.int64)
    nbr_tot = vext[nbr].sum(axis=1, dtype=np.int64)
    return int(values @ nbr_tot), int(values.sum())
