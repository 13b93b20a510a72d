from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsifuse.data import (
    CubeFormatError,
    HsiCube,
    LabelRaster,
    PatchSpec,
    SplitAssignment,
    batch_iterator,
    candidate_mask,
    extract_patches,
    load_cube,
    load_split,
    make_disjoint_split,
    make_synthetic,
    normalize_bands,
    role_counts,
    save_cube,
    save_split,
    validate_split,
)


def oracle_counts(n, fractions):
    """Floor + remainder with exact rationals (fractions given as decimal strings)."""
    fr = [Fraction(f) for f in fractions]
    if n < 3:
        return (n, 0, 0)
    floors = [int(f * n) for f in fr]
    total = min(n, int(sum(fr) * n + Fraction(1, 2)))
    rem = total - sum(floors)
    live = [i for i, f in enumerate(fr) if f > 0]
    k = 0
    while rem > 0:
        floors[live[k % len(live)]] += 1
        rem -= 1
        k += 1
    if floors[0] == 0:
        if sum(floors) < n:
            floors[0] = 1
        else:
            floors[2 if floors[2] >= floors[1] else 1] -= 1
            floors[0] = 1
    return tuple(floors)


def random_raster(rng, M, N, C, p_unlabeled=0.2):
    lab = rng.integers(1, C + 1, size=(M, N))
    lab[rng.random((M, N)) < p_unlabeled] = 0
    return LabelRaster(lab, C)


class TestCubeFile:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        cube = HsiCube(rng.normal(size=(2, 2, 3)).astype(np.float32))
        labels = LabelRaster(np.array([[0, 1], [2, 1]]), 2, ["a", "b"])
        save_cube(tmp_path / "c.hsc", cube, labels)
        c2, l2 = load_cube(tmp_path / "c.hsc")
        assert c2.values.tobytes() == cube.values.tobytes()
        assert np.array_equal(l2.labels, labels.labels) and l2.n_classes == 2
        assert l2.class_names == ["a", "b"]

    def test_header_layout(self, tmp_path):
        cube = HsiCube(np.zeros((2, 3, 4), dtype=np.float32))
        save_cube(tmp_path / "c.hsc", cube, LabelRaster(np.ones((2, 3), dtype=int), 1))
        raw = (tmp_path / "c.hsc").read_bytes()
        assert raw[:4] == b"HSC1"
        hlen = int.from_bytes(raw[4:8], "little")
        assert len(raw) == 8 + hlen + 2 * 3 * 4 * 4 + 2 * 3 * 2

    def test_truncated(self, tmp_path):
        cube = HsiCube(np.ones((2, 2, 3), dtype=np.float32))
        save_cube(tmp_path / "c.hsc", cube, LabelRaster(np.ones((2, 2), dtype=int), 1))
        raw = (tmp_path / "c.hsc").read_bytes()
        (tmp_path / "t.hsc").write_bytes(raw[:-20])
        with pytest.raises(CubeFormatError, match="truncat"):
            load_cube(tmp_path / "t.hsc")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.hsc").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(CubeFormatError):
            load_cube(tmp_path / "x.hsc")

    def test_label_out_of_range(self, tmp_path):
        cube = HsiCube(np.ones((1, 2, 2), dtype=np.float32))
        save_cube(tmp_path / "c.hsc", cube, LabelRaster(np.array([[1, 2]]), 2))
        raw = bytearray((tmp_path / "c.hsc").read_bytes())
        raw[-2:] = (9).to_bytes(2, "little")
        (tmp_path / "b.hsc").write_bytes(bytes(raw))
        with pytest.raises(CubeFormatError, match="exceeds"):
            load_cube(tmp_path / "b.hsc")

    def test_synthetic_loads_with_classes(self, tmp_path):
        cube, labels = make_synthetic(32, 32, 16, 3, seed=7)
        save_cube(tmp_path / "s.hsc", cube, labels)
        _, l2 = load_cube(tmp_path / "s.hsc")
        assert l2.n_classes == 3
        assert all(l2.class_counts()[c] >= 1 for c in (1, 2, 3))


class TestCubeTypes:
    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            HsiCube(np.array([[[np.nan]]]))

    def test_band_mask_must_increase(self):
        with pytest.raises(ValueError):
            HsiCube(np.zeros((1, 1, 2)), band_mask=[3, 1])

    def test_label_bound(self):
        with pytest.raises(ValueError):
            LabelRaster(np.array([[0, 4]]), 3)


class TestNormalize:
    def test_two_values(self):
        out = normalize_bands(HsiCube(np.array([[[2.0], [4.0]]])))
        assert np.array_equal(out.values.ravel(), [0.0, 1.0])

    def test_constant_band(self):
        out = normalize_bands(HsiCube(np.full((3, 3, 2), 5.0)))
        assert np.all(out.values == 0)

    def test_scan_and_idempotent(self):
        rng = np.random.default_rng(4)
        cube = HsiCube(rng.normal(3, 5, size=(6, 7, 5)))
        once = normalize_bands(cube)
        v = once.values.reshape(-1, 5)
        assert np.allclose(v.min(axis=0), 0) and np.allclose(v.max(axis=0), 1)
        assert np.array_equal(normalize_bands(once).values, once.values)


class TestPatches:
    def test_candidate_count_145(self):
        shape, spec = (145, 145), PatchSpec(8)
        assert candidate_mask(shape, spec).sum() == 19044 == (145 - 8 + 1) ** 2

    @pytest.mark.parametrize("S", [1, 3, 4, 5, 8])
    def test_candidate_formula(self, S):
        assert candidate_mask((16, 13), PatchSpec(S)).sum() == (16 - S + 1) * (13 - S + 1)

    def test_size_one(self):
        rng = np.random.default_rng(0)
        cube = HsiCube(rng.normal(size=(4, 5, 3)).astype(np.float32))
        labels = random_raster(rng, 4, 5, 3)
        ps = extract_patches(cube, labels, PatchSpec(1))
        assert len(ps) == int((labels.labels > 0).sum())
        p = ps.extract(ps.centers)
        assert p.shape == (len(ps), 1, 3, 1, 1)
        r, c = np.divmod(ps.centers, 5)
        assert np.array_equal(p[:, 0, :, 0, 0], cube.values[r, c])

    @pytest.mark.parametrize("S", [3, 5, 8])
    def test_center_label_and_window(self, S):
        rng = np.random.default_rng(S)
        cube = HsiCube(rng.normal(size=(16, 16, 4)).astype(np.float32))
        labels = random_raster(rng, 16, 16, 4)
        ps = extract_patches(cube, labels, PatchSpec(S))
        patches = ps.extract(ps.centers)
        assert patches.shape[1:] == (1, 4, S, S)
        b = (S - 1) // 2
        for k, flat in enumerate(ps.centers):
            a, be = divmod(int(flat), 16)
            assert ps.center_labels[k] == labels.labels[a, be]
            want = cube.values[a - b:a - b + S, be - b:be - b + S].transpose(2, 0, 1)
            assert np.array_equal(patches[k, 0], want)

    def test_too_large(self):
        cube = HsiCube(np.zeros((4, 4, 2)))
        with pytest.raises(ValueError):
            extract_patches(cube, LabelRaster(np.ones((4, 4), dtype=int), 1), PatchSpec(5))

    def test_border_centre_refused(self):
        cube = HsiCube(np.zeros((6, 6, 2)))
        ps = extract_patches(cube, LabelRaster(np.ones((6, 6), dtype=int), 1), PatchSpec(3))
        with pytest.raises(ValueError):
            ps.extract([0])


class TestBatches:
    def _set(self, n=100):
        cube = HsiCube(np.zeros((10, 10, 2), dtype=np.float32))
        return extract_patches(cube, LabelRaster(np.ones((10, 10), dtype=int), 1), PatchSpec(1))

    def test_batch_sizes(self):
        ps = self._set()
        sizes = [x.shape[0] for x, _ in batch_iterator(ps, ps.centers, 56, seed=0)]
        assert sizes == [56, 44]

    def test_seeded_order_and_multiset(self):
        ps = self._set()
        cube = np.arange(100, dtype=np.float32).reshape(10, 10, 1).repeat(2, axis=2)
        ps.cube.values[...] = cube
        runs = []
        for _ in range(2):
            runs.append(np.concatenate([x.data[:, 0, 0, 0, 0] for x, _ in batch_iterator(ps, ps.centers, 30, seed=3)]))
        assert np.array_equal(runs[0], runs[1])
        assert sorted(runs[0].astype(int).tolist()) == list(range(100))
        assert not np.array_equal(runs[0], np.arange(100))

    def test_empty_role(self):
        ps = self._set()
        with pytest.raises(ValueError):
            next(batch_iterator(ps, [], 8))


class TestSplitCounts:
    def test_alfalfa(self):
        assert role_counts(46, (0.13, 0.37, 0.50)) == (6, 17, 23)

    def test_all_train(self):
        rng = np.random.default_rng(0)
        labels = random_raster(rng, 8, 8, 3)
        s = make_disjoint_split(labels, (1, 0, 0), seed=1)
        assert s.train.size == int((labels.labels > 0).sum())
        assert s.val.size == 0 and s.test.size == 0

    def test_small_class_warns(self):
        lab = np.ones((4, 4), dtype=int)
        lab[0, 0] = 2
        with pytest.warns(UserWarning, match="class 2"):
            s = make_disjoint_split(LabelRaster(lab, 2), (0.05, 0.45, 0.5), seed=0)
        assert 0 in s.train
        assert s.per_class_counts(LabelRaster(lab, 2))[2] == (1, 0, 0)

    def test_train_at_least_one(self):
        for n in range(3, 40):
            assert role_counts(n, (0.05, 0.45, 0.50))[0] >= 1

    @given(st.integers(0, 400), st.integers(1, 60), st.integers(0, 60))
    @settings(max_examples=300, deadline=None)
    def test_matches_rational_oracle(self, n, a, b):
        c = 100 - a - b
        if c < 0:
            a, b, c = a, 100 - a, 0
        strs = (f"{a / 100:.2f}", f"{b / 100:.2f}", f"{c / 100:.2f}")
        got = role_counts(n, tuple(float(s) for s in strs))
        assert got == oracle_counts(n, strs)
        assert sum(got) <= n


class TestSplitDisjoint:
    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=40, deadline=None)
    def test_pairwise_empty_and_pure(self, seed):
        rng = np.random.default_rng(seed)
        labels = random_raster(rng, 12, 11, 4)
        s = make_disjoint_split(labels, (0.1, 0.3, 0.5), seed)
        sets = [set(s.role(r).tolist()) for r in ("train", "val", "test")]
        for x, y in combinations(sets, 2):
            assert not x & y
        flat = labels.labels.ravel()
        assert all(flat[list(x)].min() > 0 for x in sets if x)
        again = make_disjoint_split(labels, (0.1, 0.3, 0.5), seed)
        assert all(np.array_equal(s.role(r), again.role(r)) for r in ("train", "val", "test"))
        assert validate_split(s, labels) == []

    def test_eligible_restricts(self):
        rng = np.random.default_rng(1)
        labels = random_raster(rng, 10, 10, 2, p_unlabeled=0)
        mask = candidate_mask((10, 10), PatchSpec(5))
        s = make_disjoint_split(labels, (0.2, 0.3, 0.5), 0, eligible=mask)
        used = np.concatenate([s.train, s.val, s.test])
        assert mask.ravel()[used].all()


class TestValidate:
    def _split(self, seed=0):
        rng = np.random.default_rng(seed)
        labels = random_raster(rng, 10, 10, 3)
        return labels, make_disjoint_split(labels, (0.2, 0.3, 0.5), seed)

    def test_valid(self):
        labels, s = self._split()
        assert validate_split(s, labels) == []

    def test_injected_overlap_named(self):
        labels, s = self._split()
        p = int(s.test[0])
        bad = SplitAssignment(np.sort(np.append(s.train, p)), s.val, s.test, s.shape, s.seed, s.fractions,
                              s.class_totals)
        overlaps = [v for v in validate_split(bad, labels) if v.kind == "overlap"]
        assert len(overlaps) == 1 and overlaps[0].pixel == p

    def test_unlabeled_and_range(self):
        labels, s = self._split()
        zero = int(np.flatnonzero(labels.labels.ravel() == 0)[0])
        bad = SplitAssignment(np.append(s.train, [zero, 10 ** 6]), s.val, s.test, s.shape, s.seed, s.fractions)
        kinds = {v.kind for v in validate_split(bad, labels)}
        assert {"unlabeled", "out_of_range"} <= kinds

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=60, deadline=None)
    def test_fuzzed_against_set_oracle(self, seed):
        rng = np.random.default_rng(seed)
        labels = random_raster(rng, 6, 6, 2, p_unlabeled=0)
        roles = [np.unique(rng.choice(36, size=rng.integers(0, 12), replace=False)) for _ in range(3)]
        s = SplitAssignment(*roles, shape=(6, 6), seed=0, fractions=(0.2, 0.3, 0.5))
        got = sorted(v.pixel for v in validate_split(s, labels) if v.kind == "overlap")
        want = sorted(p for x, y in combinations([set(r.tolist()) for r in roles], 2) for p in x & y)
        assert got == want

    def test_count_drift(self):
        labels, s = self._split()
        short = SplitAssignment(s.train[1:], s.val, s.test, s.shape, s.seed, s.fractions, s.class_totals)
        assert any(v.kind == "count" for v in validate_split(short, labels))


class TestSplitFile:
    def test_roundtrip(self, tmp_path):
        labels = random_raster(np.random.default_rng(2), 9, 9, 3)
        s = make_disjoint_split(labels, (0.13, 0.37, 0.5), 11)
        save_split(tmp_path / "s.json", s)
        t = load_split(tmp_path / "s.json")
        assert t.seed == 11 and t.fractions == s.fractions and t.shape == s.shape
        assert all(np.array_equal(s.role(r), t.role(r)) for r in ("train", "val", "test"))
        assert validate_split(t, labels) == []


class TestSynthetic:
    def test_deterministic(self):
        a, la = make_synthetic(16, 16, 8, 3, seed=7)
        b, lb = make_synthetic(16, 16, 8, 3, seed=7)
        assert a.values.tobytes() == b.values.tobytes() and np.array_equal(la.labels, lb.labels)

    def test_noise_free_blob_is_constant(self):
        cube, labels = make_synthetic(20, 20, 6, 3, seed=1, noise=0.0, blob_gain=0.0)
        for c in (1, 2, 3):
            v = cube.values[labels.labels == c]
            assert np.allclose(v, v[0])

    def test_every_class_present(self):
        _, labels = make_synthetic(8, 8, 4, 5, seed=3)
        assert set(np.unique(labels.labels)) == {1, 2, 3, 4, 5}
