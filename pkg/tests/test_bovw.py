import numpy as np
import pytest

from locallearn.bovw import (
    DESK_VOCAB_SIZES,
    DenseSiftConfig,
    DescriptorSet,
    PyramidConfig,
    Vocabulary,
    VocabularyLevel,
    _cell_index,
    build_vocab,
    build_vocab_from_descriptors,
    dense_sift,
    encode,
    kmeans,
    load_vocab,
    read_pgm,
    save_vocab,
    subsample_rows,
    write_pgm,
)
from locallearn.errors import ImageTooSmall, LevelMismatch, MalformedFile
from locallearn.neighbors import KdForestParams, kdforest_build


class TestPgm:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, (20, 30), dtype=np.uint8)
        write_pgm(tmp_path / "a.pgm", img)
        assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)

    def test_comment_in_header(self, tmp_path):
        img = np.zeros((2, 2), dtype=np.uint8)
        raw = b"P5\n# a comment\n2 2\n255\n" + img.tobytes()
        (tmp_path / "c.pgm").write_bytes(raw)
        assert np.array_equal(read_pgm(tmp_path / "c.pgm"), img)

    def test_rejects_16bit(self, tmp_path):
        (tmp_path / "b.pgm").write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(MalformedFile):
            read_pgm(tmp_path / "b.pgm")

    def test_rejects_truncated(self, tmp_path):
        (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
        with pytest.raises(MalformedFile):
            read_pgm(tmp_path / "t.pgm")


class TestDenseSift:
    def test_constant_image_all_zero(self):
        img = np.full((24, 24), 77, dtype=np.uint8)
        descs = dense_sift(img, DenseSiftConfig(bin_sizes=(4,), step=4))
        assert len(descs) > 0
        assert np.all(descs.vectors == 0.0)

    def test_descriptor_dim_128(self):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, (32, 32), dtype=np.uint8)
        descs = dense_sift(img, DenseSiftConfig(bin_sizes=(4, 6), step=4))
        assert descs.vectors.shape[1] == 128

    def test_entries_in_unit_interval(self):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, (48, 48), dtype=np.uint8)
        descs = dense_sift(img, DenseSiftConfig(bin_sizes=(4, 8), step=6))
        assert descs.vectors.min() >= 0.0
        assert descs.vectors.max() <= 1.0 + 1e-12

    def test_vertical_edge_mass_in_horizontal_gradient_bins(self):
        # A vertical step edge has purely horizontal gradients, i.e.
        # orientations 0 or pi, which are orientation bins 0 and 4 of 8.
        img = np.zeros((16, 16), dtype=np.uint8)
        img[:, 8:] = 255
        descs = dense_sift(img, DenseSiftConfig(bin_sizes=(4,), step=16))
        vec = descs.vectors[0].reshape(16, 8)
        by_orientation = vec.sum(axis=0)
        mass = by_orientation.sum()
        assert mass > 0
        assert (by_orientation[0] + by_orientation[4]) / mass > 0.99
        # oracle: dominant gradient direction computed directly
        gy, gx = np.gradient(img.astype(float) / 255.0)
        assert np.abs(gx).sum() > 0 and np.abs(gy).sum() == 0.0

    def test_image_too_small(self):
        with pytest.raises(ImageTooSmall):
            dense_sift(np.zeros((15, 40), dtype=np.uint8), DenseSiftConfig(bin_sizes=(4,)))

    def test_grid_positions_and_scales(self):
        img = np.zeros((20, 26), dtype=np.uint8)
        descs = dense_sift(img, DenseSiftConfig(bin_sizes=(4,), step=2))
        assert descs.x.min() == 8 and descs.x.max() == 18
        assert descs.y.min() == 8 and descs.y.max() == 12
        assert set(descs.scale.tolist()) == {4}
        d0 = descs[0]
        assert d0.vector.shape == (128,)


class TestKmeans:
    def test_k_equals_n_distinct_points(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(6, 4))
        cents = kmeans(pts, 6, seed=0)
        assert sorted(map(tuple, cents.tolist())) == sorted(map(tuple, pts.tolist()))

    def test_two_blobs_recover_means(self):
        rng = np.random.default_rng(4)
        a = rng.normal(0.0, 0.01, (50, 3))
        b = rng.normal(10.0, 0.01, (60, 3))
        cents, _ = kmeans(np.vstack([a, b]), 2, seed=1, return_history=True)
        means = sorted([a.mean(axis=0), b.mean(axis=0)], key=lambda m: m[0])
        got = sorted(cents.tolist(), key=lambda m: m[0])
        assert np.allclose(got[0], means[0], atol=1e-6)
        assert np.allclose(got[1], means[1], atol=1e-6)

    def test_wcss_non_increasing(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(200, 8))
        _, history = kmeans(pts, 10, seed=2, return_history=True)
        for prev, nxt in zip(history, history[1:]):
            assert nxt <= prev * (1.0 + 1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(6)
        pts = rng.normal(size=(100, 5))
        assert np.array_equal(kmeans(pts, 7, seed=9), kmeans(pts, 7, seed=9))

    def test_k_exceeds_n_duplicates(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
        cents = kmeans(pts, 5, seed=0)
        assert cents.shape == (5, 2)
        assert np.array_equal(cents[:3], pts)
        for extra in cents[3:]:
            assert any(np.array_equal(extra, p) for p in pts)

    def test_worker_count_invariance(self):
        rng = np.random.default_rng(14)
        pts = rng.normal(size=(500, 6))
        a = kmeans(pts, 8, seed=3, workers=1)
        b = kmeans(pts, 8, seed=3, workers=4)
        assert np.array_equal(a, b)


class TestEncode:
    def _toy_vocab(self, centroids_per_level, grids):
        levels = []
        for cents, grid in zip(centroids_per_level, grids):
            cents = np.asarray(cents, dtype=np.float64)
            forest = kdforest_build(cents, KdForestParams(n_trees=1, seed=0))
            levels.append(VocabularyLevel(grid, cents, forest))
        return Vocabulary(levels=levels, sift=DenseSiftConfig(), forest_params=KdForestParams())

    def _descset(self, vectors, xs, ys):
        vectors = np.asarray(vectors, dtype=np.float64)
        return DescriptorSet(
            vectors=vectors,
            x=np.asarray(xs),
            y=np.asarray(ys),
            scale=np.full(len(xs), 4),
        )

    def test_toy_example_exact_bits(self):
        # 2 words, levels {1x1, 2x2}; one descriptor in the top-left
        # quadrant quantizing to word 0 -> dim 10 with exactly two ones.
        words = [[0.0, 0.0], [10.0, 10.0]]
        vocab = self._toy_vocab([words, words], [1, 2])
        pyr = PyramidConfig(levels=(1, 2), vocab_sizes=(2, 2))
        descs = self._descset([[0.1, 0.0]], [5], [7])
        out = encode(descs, vocab, pyr, (32, 32))
        assert out.shape == (10,)
        expected = np.zeros(10)
        expected[0] = 1.0  # level 0, cell 0, word 0
        expected[2] = 1.0  # level 1, cell (0,0), word 0
        assert np.array_equal(out, expected)

    def test_zero_descriptors_zero_vector(self):
        vocab = self._toy_vocab([[[0.0], [1.0]]], [1])
        pyr = PyramidConfig(levels=(1,), vocab_sizes=(2,))
        descs = self._descset(np.zeros((0, 1)), [], [])
        assert np.array_equal(encode(descs, vocab, pyr, (16, 16)), np.zeros(2))

    def test_output_binary_and_dim_fixed(self):
        rng = np.random.default_rng(7)
        words = rng.normal(size=(3, 2))
        vocab = self._toy_vocab([words, words], [1, 2])
        pyr = PyramidConfig(levels=(1, 2), vocab_sizes=(3, 3))
        for n in (1, 5, 20):
            descs = self._descset(
                rng.normal(size=(n, 2)),
                rng.integers(0, 32, n),
                rng.integers(0, 32, n),
            )
            out = encode(descs, vocab, pyr, (32, 32))
            assert out.shape == (pyr.encoded_dim,)
            assert set(np.unique(out)) <= {0.0, 1.0}

    def test_level_mismatch(self):
        vocab = self._toy_vocab([[[0.0], [1.0]]], [1])
        pyr = PyramidConfig(levels=(1, 2), vocab_sizes=(2, 2))
        with pytest.raises(LevelMismatch):
            encode(self._descset([[0.5]], [1], [1]), vocab, pyr, (16, 16))

    def test_full_scale_dim_closed_form(self):
        pyr = PyramidConfig()  # full-scale defaults: 1..4 grids, 17k/14k/11k/8k
        assert pyr.encoded_dim == 1 * 17000 + 4 * 14000 + 9 * 11000 + 16 * 8000
        assert pyr.encoded_dim == 300000
        desk = PyramidConfig(vocab_sizes=DESK_VOCAB_SIZES)
        assert desk.encoded_dim == 1 * 100 + 4 * 80 + 9 * 60 + 16 * 40 == 1600

    def test_boundary_descriptor_goes_to_lower_cell(self):
        # x = 16 on a 32-wide image with a 2x2 grid sits exactly on the
        # cell boundary -> belongs to column 0.
        assert _cell_index(16, 32, 2) == 0
        assert _cell_index(17, 32, 2) == 1
        assert _cell_index(0, 32, 2) == 0
        assert _cell_index(31, 32, 2) == 1

    def test_matches_brute_force_nearest_centroid(self):
        rng = np.random.default_rng(8)
        words = rng.normal(size=(17, 6))
        vocab = self._toy_vocab([words], [2])
        pyr = PyramidConfig(levels=(2,), vocab_sizes=(17,))
        descs = self._descset(
            rng.normal(size=(30, 6)), rng.integers(0, 48, 30), rng.integers(0, 48, 30)
        )
        forest = vocab.levels[0].forest
        out = encode(descs, vocab, pyr, (48, 48), budget=forest.node_count)
        expected = np.zeros(pyr.encoded_dim)
        for i in range(30):
            d2 = np.sum((words - descs.vectors[i]) ** 2, axis=1)
            word = int(np.argmin(d2))
            row = _cell_index(int(descs.y[i]), 48, 2)
            col = _cell_index(int(descs.x[i]), 48, 2)
            expected[(row * 2 + col) * 17 + word] = 1.0
        assert np.array_equal(out, expected)


class TestVocabulary:
    def test_build_sizes_contract(self):
        rng = np.random.default_rng(9)
        imgs = [rng.integers(0, 256, (24, 24), dtype=np.uint8) for _ in range(2)]
        sift = DenseSiftConfig(bin_sizes=(4,), step=4)
        pyr = PyramidConfig(levels=(1, 2), vocab_sizes=(4, 3))
        vocab = build_vocab(imgs, sift, pyr, seed=0)
        assert [lv.centroids.shape[0] for lv in vocab.levels] == [4, 3]

    def test_deterministic(self):
        rng = np.random.default_rng(10)
        imgs = [rng.integers(0, 256, (24, 24), dtype=np.uint8) for _ in range(2)]
        sift = DenseSiftConfig(bin_sizes=(4,), step=4)
        pyr = PyramidConfig(levels=(1,), vocab_sizes=(5,))
        v1 = build_vocab(imgs, sift, pyr, seed=3)
        v2 = build_vocab(imgs, sift, pyr, seed=3)
        assert np.array_equal(v1.levels[0].centroids, v2.levels[0].centroids)

    def test_subsample_cap_respected(self):
        rng = np.random.default_rng(11)
        pool = rng.normal(size=(5000, 8))
        sub = subsample_rows(pool, 1200, seed=4)
        assert sub.shape == (1200, 8)
        rows_as_set = {tuple(r) for r in sub}
        all_rows = {tuple(r) for r in pool}
        assert rows_as_set <= all_rows
        under = subsample_rows(pool[:100], 1200, seed=4)
        assert np.array_equal(under, pool[:100])

    def test_save_load_roundtrip(self, tmp_path):
        rng = np.random.default_rng(12)
        descs = rng.normal(size=(300, 16))
        sift = DenseSiftConfig(bin_sizes=(4, 6), step=3)
        pyr = PyramidConfig(levels=(1, 2), vocab_sizes=(6, 4))
        vocab = build_vocab_from_descriptors(descs, sift, pyr, seed=5)
        save_vocab(vocab, tmp_path / "v.llvb")
        back = load_vocab(tmp_path / "v.llvb")
        assert back.sift == sift
        assert len(back.levels) == 2
        for lv, lv2 in zip(vocab.levels, back.levels):
            assert lv.grid == lv2.grid
            assert np.array_equal(lv.centroids, lv2.centroids)
        # rebuilt forests answer identically
        q = rng.normal(size=16)
        from locallearn.neighbors import kdforest_nn

        for lv, lv2 in zip(vocab.levels, back.levels):
            assert kdforest_nn(lv.forest, q) == kdforest_nn(lv2.forest, q)

    def test_flip_invariance_on_symmetric_image(self):
        # A horizontally symmetric image equals its flip, so the whole
        # encoding (including the 1x1 level) is trivially flip-invariant.
        x = np.arange(32)
        wave = (127.5 + 100.0 * np.cos((x - 15.5) * 0.7)).astype(np.uint8)
        img = np.tile(wave[None, :], (32, 1))
        assert np.array_equal(img, img[:, ::-1])
        sift = DenseSiftConfig(bin_sizes=(4,), step=4)
        pyr = PyramidConfig(levels=(1, 2), vocab_sizes=(5, 5))
        vocab = build_vocab([img], sift, pyr, seed=6)
        d1 = dense_sift(img, sift)
        d2 = dense_sift(img[:, ::-1], sift)
        e1 = encode(d1, vocab, pyr, (32, 32))
        e2 = encode(d2, vocab, pyr, (32, 32))
        assert np.array_equal(e1, e2)
