"""Masked 3D lattice geometry and grid-file serialization.

Voxels live on an ``(nx, ny, nz)`` grid restricted by a boolean mask. In-mask
voxels are indexed 0..N-1 in a fixed order with x varying fastest, then y,
then z; every per-site array in the package (states, statistics, labels,
posterior quantities) uses this order. Adjacency is the six-nearest-neighbor
relation with no wraparound: boundary voxels and voxels next to masked-out
cells simply have fewer neighbors.
"""

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

# (dx, dy, dz) offsets of the six nearest neighbors
_OFFSETS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


class GridFormatError(ValueError):
    """Raised for malformed grid files."""


@dataclass(frozen=True)
class Lattice3D:
    """Immutable masked lattice with precomputed neighbor structure.

    Attributes
    ----------
    dims : (nx, ny, nz)
    mask : bool array of shape dims, True where a voxel exists
    group_labels : int32 array of length N, one ROI/group id per voxel
    nbr : int32 array (N, 6); neighbor site ids, padded with the
        sentinel value N for absent neighbors
    nbr_counts : int32 array (N,), number of in-mask neighbors per site
    colors : uint8 array (N,), checkerboard parity (x+y+z) mod 2
    site_xyz : int32 array (N, 3), grid coordinates per site
    """

    dims: tuple
    mask: np.ndarray
    group_labels: np.ndarray
    nbr: np.ndarray
    nbr_counts: np.ndarray
    colors: np.ndarray
    site_xyz: np.ndarray
    site_of_cell: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        """Number of in-mask voxels."""
        return self.nbr.shape[0]

    @property
    def n_pairs(self) -> int:
        """Number of unordered in-mask neighbor pairs."""
        return int(self.nbr_counts.sum()) // 2

    def neighbors(self, s: int) -> np.ndarray:
        """Site ids of the in-mask neighbors of site ``s``."""
        row = self.nbr[s]
        return row[row < self.n]

    def color_sites(self, color: int) -> np.ndarray:
        """Site ids with the given checkerboard parity."""
        return np.flatnonzero(self.colors == color).astype(np.int32)

    def embed(self, values: np.ndarray, fill=np.nan) -> np.ndarray:
        """Scatter per-site values into a full (nx, ny, nz) grid."""
        values = np.asarray(values)
        out = np.full(self.dims, fill, dtype=np.result_type(values.dtype, type(fill)))
        x, y, z = self.site_xyz.T
        out[x, y, z] = values
        return out

    def extract(self, grid: np.ndarray) -> np.ndarray:
        """Gather per-site values from a full (nx, ny, nz) grid."""
        grid = np.asarray(grid)
        if grid.shape != self.dims:
            raise ValueError(f"grid shape {grid.shape} does not match dims {self.dims}")
        x, y, z = self.site_xyz.T
        return grid[x, y, z]


def build_lattice(dims, mask, group_labels=None) -> Lattice3D:
    """Construct a lattice from a boolean mask and optional group labels.

    ``mask`` and ``group_labels`` are full (nx, ny, nz) grids. Labels must be
    non-negative on in-mask voxels; they default to a single group 0.
    """
    nx, ny, nz = (int(d) for d in dims)
    if min(nx, ny, nz) < 1:
        raise ValueError(f"dims must be positive, got {dims}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (nx, ny, nz):
        raise ValueError(f"mask shape {mask.shape} does not match dims {(nx, ny, nz)}")

    # cell index with x fastest: c = x + nx*(y + ny*z)
    mask_flat = mask.ravel(order="F")
    cell_ids = np.flatnonzero(mask_flat)
    n = cell_ids.size
    if n == 0:
        raise ValueError("mask selects no voxels")

    site_of_cell = np.full(nx * ny * nz, -1, dtype=np.int64)
    site_of_cell[cell_ids] = np.arange(n)

    x = cell_ids % nx
    y = (cell_ids // nx) % ny
    z = cell_ids // (nx * ny)

    nbr = np.full((n, 6), n, dtype=np.int32)
    for j, (dx, dy, dz) in enumerate(_OFFSETS):
        xx, yy, zz = x + dx, y + dy, z + dz
        inside = (xx >= 0) & (xx < nx) & (yy >= 0) & (yy < ny) & (zz >= 0) & (zz < nz)
        cell = np.where(inside, xx + nx * (yy + ny * zz), 0)
        site = site_of_cell[cell]
        ok = inside & (site >= 0)
        nbr[ok, j] = site[ok]

    nbr_counts = (nbr < n).sum(axis=1).astype(np.int32)
    colors = ((x + y + z) & 1).astype(np.uint8)
    site_xyz = np.stack([x, y, z], axis=1).astype(np.int32)

    if group_labels is None:
        labels = np.zeros(n, dtype=np.int32)
    else:
        group_labels = np.asarray(group_labels)
        if group_labels.shape != (nx, ny, nz):
            raise ValueError(
                f"group_labels shape {group_labels.shape} does not match dims {(nx, ny, nz)}"
            )
        labels = group_labels.ravel(order="F")[cell_ids].astype(np.int32)
        if (labels < 0).any():
            raise ValueError("group labels of in-mask voxels must be non-negative")

    return Lattice3D(
        dims=(nx, ny, nz),
        mask=mask,
        group_labels=labels,
        nbr=nbr,
        nbr_counts=nbr_counts,
        colors=colors,
        site_xyz=site_xyz,
        site_of_cell=site_of_cell,
    )


def sublattice(lattice: Lattice3D, keep: np.ndarray):
    """Restrict to the sites where ``keep`` is True.

    Returns the restricted lattice plus the parent site indices of its sites
    (in the new lattice's site order). Edges to dropped sites are severed.
    """
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (lattice.n,):
        raise ValueError("keep must be a boolean vector with one entry per site")
    mask = lattice.embed(keep, fill=False).astype(bool)
    labels_grid = lattice.embed(lattice.group_labels, fill=-1).astype(np.int32)
    labels_grid[~mask] = 0
    sub = build_lattice(lattice.dims, mask, labels_grid)
    parent_index = np.flatnonzero(keep)
    return sub, parent_index


def as_state_field(lattice: Lattice3D, values) -> np.ndarray:
    """Validate a binary per-site field and return it as uint8."""
    arr = np.asarray(values)
    if arr.shape != (lattice.n,):
        raise ValueError(f"state field has length {arr.shape}, expected ({lattice.n},)")
    out = arr.astype(np.uint8)
    if not np.isin(out, (0, 1)).all() or not np.array_equal(out, arr):
        raise ValueError("state field values must be 0 or 1")
    return out


def as_stat_field(lattice: Lattice3D, values) -> np.ndarray:
    """Validate a real per-site field and return it as float64."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (lattice.n,):
        raise ValueError(f"stat field has length {arr.shape}, expected ({lattice.n},)")
    if not np.isfinite(arr).all():
        raise ValueError("stat field values must be finite")
    return arr


def padded_values(lattice: Lattice3D, values: np.ndarray) -> np.ndarray:
    """Append the zero pad slot indexed by the neighbor sentinel."""
    vext = np.zeros(lattice.n + 1, dtype=np.uint8)
    vext[: lattice.n] = values
    return vext


def neighbor_sum(lattice: Lattice3D, values, s: int) -> int:
    """Number of neighbors of site ``s`` currently in state 1."""
    if not 0 <= s < lattice.n:
        raise IndexError(f"site index {s} out of range [0, {lattice.n})")
    values = np.asarray(values)
    vext = padded_values(lattice, values)
    return int(vext[lattice.nbr[s]].sum())


def sufficient_stats(lattice: Lattice3D, values) -> tuple:
    """Return ``(pair_sum, site_sum)`` for a binary field.

    ``pair_sum`` counts unordered neighbor pairs with both sites in state 1;
    ``site_sum`` counts sites in state 1.
    """
    values = np.asarray(values)
    if values.shape != (lattice.n,):
        raise ValueError(f"field has length {values.shape}, expected ({lattice.n},)")
    vext = padded_values(lattice, values)
    nbr_tot = vext[lattice.nbr].sum(axis=1, dtype=np.int64)
    pair2 = int((values.astype(np.int64) * nbr_tot).sum())
    return pair2 // 2, int(values.sum(dtype=np.int64))


# ---------------------------------------------------------------------------
# grid file format
# ---------------------------------------------------------------------------
#
# Binary layout: magic "HMRF1", one kind byte, then nx, ny, nz as uint32
# little-endian, then the full-grid payload with x varying fastest.
# Kinds: 'f' float64 statistics (NaN outside the mask), 'm' uint8 mask,
# 'l' int32 labels (-1 outside the mask).

_MAGIC = b"HMRF1"
_KINDS = {"stat": (b"f", "<f8"), "mask": (b"m", "<u1"), "labels": (b"l", "<i4")}
_KIND_OF_BYTE = {v[0]: k for k, v in _KINDS.items()}


def write_grid(path, grid: np.ndarray, kind: str) -> None:
    """Write a full (nx, ny, nz) grid to the binary grid format."""
    if kind not in _KINDS:
        raise ValueError(f"unknown grid kind {kind!r}, expected one of {sorted(_KINDS)}")
    code, dtype = _KINDS[kind]
    grid = np.asarray(grid)
    if grid.ndim != 3:
        raise ValueError(f"grid must be 3-dimensional, got shape {grid.shape}")
    nx, ny, nz = grid.shape
    payload = np.ascontiguousarray(grid.ravel(order="F")).astype(dtype)
    with open(path, "wb") as fh:
        fh.write(_MAGIC + code + struct.pack("<III", nx, ny, nz))
        fh.write(payload.tobytes())


def read_grid(path, dims=None):
    """Read a grid file; returns ``(grid, kind)``.

    Accepts either the binary format (sniffed by magic) or a plain-text CSV
    with ``x,y,z,value`` rows. For CSV, ``dims`` may be given; otherwise they
    are inferred from the maximum coordinates.
    """
    with open(path, "rb") as fh:
        head = fh.read(len(_MAGIC))
        if head == _MAGIC:
            code = fh.read(1)
            if code not in _KIND_OF_BYTE:
                raise GridFormatError(f"{path}: unknown element kind byte {code!r}")
            kind = _KIND_OF_BYTE[code]
            nx, ny, nz = struct.unpack("<III", fh.read(12))
            dtype = _KINDS[kind][1]
            count = nx * ny * nz
            data = np.frombuffer(fh.read(), dtype=dtype, count=-1)
            if data.size != count:
                raise GridFormatError(
                    f"{path}: payload has {data.size} elements, expected {count}"
                )
            grid = data.reshape((nx, ny, nz), order="F")
            return grid.copy(), kind
    return read_grid_csv(path, dims=dims), "stat"


def read_grid_csv(path, dims=None, fill=np.nan) -> np.ndarray:
    """Read ``x,y,z,value`` CSV rows into a float grid (header optional)."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or (lineno == 1 and not _is_number(rec[0])):
                continue  # blank line or header
            if len(rec) != 4:
                raise GridFormatError(f"{path}:{lineno}: expected 4 columns, got {len(rec)}")
            try:
                rows.append((int(rec[0]), int(rec[1]), int(rec[2]), float(rec[3])))
            except ValueError as exc:
                raise GridFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise GridFormatError(f"{path}: no data rows")
    arr = np.array(rows)
    xyz = arr[:, :3].astype(np.int64)
    if xyz.min() < 0:
        raise GridFormatError(f"{path}: negative coordinates")
    if dims is None:
        dims = tuple(xyz.max(axis=0) + 1)
    grid = np.full(dims, fill, dtype=np.float64)
    if (xyz >= np.asarray(dims)).any():
        raise GridFormatError(f"{path}: coordinates exceed dims {dims}")
    grid[xyz[:, 0], xyz[:, 1], xyz[:, 2]] = arr[:, 3]
    return grid


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False
