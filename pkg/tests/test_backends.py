import numpy as np
import pytest

from hmrf_fdr import _backend
from hmrf_fdr.ising import GibbsConfig, IsingParams, run_chain
from hmrf_fdr.lattice import build_lattice

from conftest import full_box

needs_compiled = pytest.mark.skipif(
    not _backend.have_compiled(), reason="compiled kernels not built"
)


def test_backend_selection(monkeypatch):
    assert _backend.get_backend("python") is _backend._kernels_py
    monkeypatch.setenv("HMRF_BACKEND", "python")
    assert _backend.backend_name() == "python"
    with pytest.raises(ValueError, match="unknown backend"):
        _backend.get_backend("fortran")


@needs_compiled
@pytest.mark.parametrize("sweep_order", ["raster", "checkerboard"])
@pytest.mark.parametrize("beta,h", [(0.0, 0.0), (0.8, -2.5), (1.5, 1.0), (-0.4, 0.3)])
def test_chain_bit_parity(sweep_order, beta, h):
    lat = full_box(4, 3, 3)
    cfg = GibbsConfig(n_samples=400, burn_in=50, seed=97, sweep_order=sweep_order)
    hs = np.full(lat.n, h)
    chains = {}
    for name in ("python", "compiled"):
        kern = _backend.get_backend(name)
        chains[name] = run_chain(lat, beta, hs, cfg, collect_samples=True, backend=kern)
    assert np.array_equal(chains["python"].samples, chains["compiled"].samples)
    assert np.array_equal(chains["python"].h_stats, chains["compiled"].h_stats)


@needs_compiled
def test_chain_bit_parity_site_field_and_mask(box_args=None):
    rng = np.random.default_rng(99)
    mask = rng.random((4, 4, 2)) < 0.8
    mask[0, 0, 0] = True
    lat = build_lattice((4, 4, 2), mask)
    hs = rng.normal(-1.0, 2.0, lat.n)
    cfg = GibbsConfig(n_samples=300, burn_in=30, seed=101, sweep_order="raster")
    a = run_chain(lat, 0.9, hs, cfg, collect_samples=True, backend=_backend.get_backend("python"))
    b = run_chain(lat, 0.9, hs, cfg, collect_samples=True, backend=_backend.get_backend("compiled"))
    assert np.array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.site_mean, b.site_mean)
