import numpy as np
import pytest

from hmrf_fdr.lattice import (
    GridFormatError,
    as_state_field,
    as_stat_field,
    build_lattice,
    neighbor_sum,
    read_grid,
    read_grid_csv,
    sublattice,
    sufficient_stats,
    write_grid,
)

from conftest import full_box, random_masked_lattice


def edge_list(lattice):
    """Independent pair enumeration straight from the neighbor lists."""
    return [(s, int(t)) for s in range(lattice.n) for t in lattice.neighbors(s) if s < t]


class TestBuildLattice:
    def test_2x2x1_full(self):
        lat = full_box(2, 2, 1)
        assert lat.n == 4
        assert list(lat.nbr_counts) == [2, 2, 2, 2]

    def test_15cube_full(self):
        lat = full_box(15, 15, 15)
        assert lat.n == 3375
        interior = (lat.site_xyz > 0).all(axis=1) & (lat.site_xyz < 14).all(axis=1)
        assert (lat.nbr_counts[interior] == 6).all()
        # corners have 3 neighbors
        assert lat.nbr_counts[0] == 3

    def test_masked_middle_severs_adjacency(self):
        mask = np.array([True, False, True]).reshape(3, 1, 1)
        lat = build_lattice((3, 1, 1), mask)
        assert lat.n == 2
        assert list(lat.nbr_counts) == [0, 0]

    def test_neighbor_relation_symmetric(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            lat = random_masked_lattice(rng, dims=(4, 3, 3))
            for s in range(lat.n):
                for t in lat.neighbors(s):
                    assert s in lat.neighbors(int(t))

    def test_site_order_x_fastest(self):
        lat = full_box(3, 2, 2)
        assert lat.site_xyz[0].tolist() == [0, 0, 0]
        assert lat.site_xyz[1].tolist() == [1, 0, 0]
        assert lat.site_xyz[3].tolist() == [0, 1, 0]
        assert lat.site_xyz[6].tolist() == [0, 0, 1]

    def test_errors(self):
        with pytest.raises(ValueError, match="dims"):
            build_lattice((0, 2, 2), np.ones((0, 2, 2), bool))
        with pytest.raises(ValueError, match="mask shape"):
            build_lattice((2, 2, 2), np.ones((2, 2, 1), bool))
        with pytest.raises(ValueError, match="no voxels"):
            build_lattice((2, 2, 2), np.zeros((2, 2, 2), bool))
        with pytest.raises(ValueError, match="non-negative"):
            labels = -np.ones((2, 2, 1), dtype=int)
            build_lattice((2, 2, 1), np.ones((2, 2, 1), bool), labels)

    def test_group_labels_extracted_in_site_order(self):
        labels = np.zeros((2, 2, 1), dtype=int)
        labels[:, 1, 0] = 3
        lat = full_box(2, 2, 1, labels)
        assert lat.group_labels.tolist() == [0, 0, 3, 3]


class TestNeighborSum:
    def test_all_ones_interior(self):
        lat = full_box(15, 15, 15)
        ones = np.ones(lat.n, dtype=np.uint8)
        interior = int(np.flatnonzero(lat.nbr_counts == 6)[0])
        assert neighbor_sum(lat, ones, interior) == 6

    def test_all_zeros(self):
        lat = full_box(3, 3, 3)
        assert neighbor_sum(lat, np.zeros(lat.n, np.uint8), 5) == 0

    def test_corner_of_3cube(self):
        lat = full_box(3, 3, 3)
        ones = np.ones(lat.n, dtype=np.uint8)
        assert neighbor_sum(lat, ones, 0) == 3

    def test_out_of_range(self):
        lat = full_box(2, 2, 1)
        with pytest.raises(IndexError):
            neighbor_sum(lat, np.zeros(4, np.uint8), 4)


class TestSufficientStats:
    def test_2x2x1_all_ones(self):
        lat = full_box(2, 2, 1)
        assert sufficient_stats(lat, np.ones(4, np.uint8)) == (4, 4)

    def test_all_zeros(self):
        lat = full_box(3, 2, 2)
        assert sufficient_stats(lat, np.zeros(lat.n, np.uint8)) == (0, 0)

    def test_2x1x1_single_site_on(self):
        lat = full_box(2, 1, 1)
        assert sufficient_stats(lat, np.array([1, 0], np.uint8)) == (0, 1)

    def test_matches_edge_iteration_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            lat = random_masked_lattice(rng, dims=(4, 4, 3))
            theta = (rng.random(lat.n) < 0.5).astype(np.uint8)
            pair, site = sufficient_stats(lat, theta)
            expected_pair = sum(int(theta[s]) * int(theta[t]) for s, t in edge_list(lat))
            assert pair == expected_pair
            assert site == int(theta.sum())

    def test_degree_sum_equals_twice_pairs(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            lat = random_masked_lattice(rng, dims=(5, 3, 3))
            assert int(lat.nbr_counts.sum()) == 2 * lat.n_pairs
            assert lat.n_pairs == len(edge_list(lat))

    def test_axis_relabeling_invariance(self):
        rng = np.random.default_rng(5)
        mask = rng.random((4, 4, 4)) < 0.8
        theta_grid = rng.random((4, 4, 4)) < 0.5
        base = None
        for perm in [(0, 1, 2), (1, 0, 2), (2, 1, 0), (0, 2, 1), (1, 2, 0), (2, 0, 1)]:
            m = np.transpose(mask, perm)
            lat = build_lattice(m.shape, m)
            theta = lat.extract(np.transpose(theta_grid, perm)).astype(np.uint8)
            stats = sufficient_stats(lat, theta)
            base = stats if base is None else base
            assert stats == base


class TestFieldsAndViews:
    def test_as_state_field_validates(self, box221):
        as_state_field(box221, [0, 1, 1, 0])
        with pytest.raises(ValueError):
            as_state_field(box221, [0, 1, 2, 0])
        with pytest.raises(ValueError):
            as_state_field(box221, [0, 1, 1])

    def test_as_stat_field_requires_finite(self, box221):
        as_stat_field(box221, [0.0, -1.5, 2.0, 3.0])
        with pytest.raises(ValueError):
            as_stat_field(box221, [0.0, np.inf, 2.0, 3.0])

    def test_embed_extract_roundtrip(self):
        rng = np.random.default_rng(2)
        lat = random_masked_lattice(rng, dims=(3, 4, 2))
        vals = rng.standard_normal(lat.n)
        grid = lat.embed(vals)
        assert np.isnan(grid[~lat.mask]).all()
        np.testing.assert_array_equal(lat.extract(grid), vals)

    def test_sublattice_severs_and_maps(self):
        lat = full_box(3, 1, 1)
        keep = np.array([True, False, True])
        sub, parent = sublattice(lat, keep)
        assert sub.n == 2
        assert list(sub.nbr_counts) == [0, 0]
        assert parent.tolist() == [0, 2]


class TestGridIO:
    @pytest.mark.parametrize(
        "kind,dtype,fill",
        [("stat", np.float64, np.nan), ("mask", np.uint8, 0), ("labels", np.int32, -1)],
    )
    def test_binary_roundtrip(self, tmp_path, kind, dtype, fill):
        rng = np.random.default_rng(9)
        grid = (rng.random((3, 4, 2)) * 10).astype(dtype)
        path = tmp_path / f"{kind}.grid"
        write_grid(path, grid, kind)
        back, back_kind = read_grid(path)
        assert back_kind == kind
        assert back.dtype == np.dtype(dtype).newbyteorder("=") or back.dtype == dtype
        np.testing.assert_array_equal(back, grid)

    def test_float_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(10)
        grid = rng.standard_normal((4, 3, 3))
        path = tmp_path / "z.grid"
        write_grid(path, grid, "stat")
        back, _ = read_grid(path)
        assert back.tobytes() == grid.tobytes()

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "bad.grid"
        write_grid(path, np.zeros((2, 2, 2)), "stat")
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(GridFormatError, match="expected"):
            read_grid(path)

    def test_csv_ingestion(self, tmp_path):
        path = tmp_path / "vals.csv"
        path.write_text("x,y,z,value\n0,0,0,1.5\n1,0,0,-2.0\n1,1,0,0.25\n")
        grid = read_grid_csv(path)
        assert grid.shape == (2, 2, 1)
        assert grid[0, 0, 0] == 1.5
        assert grid[1, 0, 0] == -2.0
        assert np.isnan(grid[0, 1, 0])

    def test_read_grid_falls_back_to_csv(self, tmp_path):
        path = tmp_path / "vals.csv"
        path.write_text("0,0,0,1.0\n1,0,0,2.0\n")
        grid, kind = read_grid(path, dims=(2, 1, 1))
        assert kind == "stat"
        assert grid[1, 0, 0] == 2.0

    def test_csv_errors_carry_line_numbers(self, tmp_path):
        path = tmp_path / "vals.csv"
        path.write_text("0,0,0,1.0\n1,0,oops,2.0\n")
        with pytest.raises(GridFormatError, match="vals.csv:2"):
            read_grid_csv(path)
