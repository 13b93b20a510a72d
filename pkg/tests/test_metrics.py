import json
from fractions import Fraction

import numpy as np
import pytest

from hsifuse.metrics import (
    PALETTE,
    ConfusionMatrix,
    MetricsReport,
    agreement,
    class_map,
    emit_map,
    kappa,
    oa_aa,
    palette,
    read_ppm,
)


def brute_force(counts):
    """OA, AA and kappa by explicit loops over cells, all as Fractions."""
    C = len(counts)
    total = sum(counts[i][j] for i in range(C) for j in range(C))
    agree = sum(counts[i][i] for i in range(C))
    p_o = Fraction(agree, total)
    p_e = Fraction(0)
    for i in range(C):
        row = sum(counts[i][j] for j in range(C))
        col = sum(counts[j][i] for j in range(C))
        p_e += Fraction(row, total) * Fraction(col, total)
    recalls = []
    for i in range(C):
        row = sum(counts[i][j] for j in range(C))
        if row:
            recalls.append(Fraction(counts[i][i], row))
    aa = sum(recalls, Fraction(0)) / len(recalls)
    if p_e == 1:
        k = Fraction(1) if p_o == 1 else Fraction(0)
    else:
        k = (p_o - p_e) / (1 - p_e)
    return p_o, aa, k, p_e


def random_matrices(n, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        C = int(rng.integers(1, 8))
        hi = int(rng.choice([2, 5, 50, 1000]))
        m = rng.integers(0, hi, size=(C, C))
        if rng.random() < 0.2:
            m[int(rng.integers(C))] = 0  # absent class
        if m.sum() == 0:
            m[0, 0] = 1
        yield m


class TestConfusion:
    def test_from_labels(self):
        cm = ConfusionMatrix.from_labels([0, 0, 1, 2, 2], [0, 1, 1, 2, 0], 3)
        assert np.array_equal(cm.counts, [[1, 1, 0], [0, 1, 0], [1, 0, 1]])
        assert cm.total == 5

    def test_merge_equals_single_pass(self):
        rng = np.random.default_rng(1)
        t, p = rng.integers(0, 4, 200), rng.integers(0, 4, 200)
        whole = ConfusionMatrix.from_labels(t, p, 4)
        parts = ConfusionMatrix.from_labels(t[:70], p[:70], 4) + ConfusionMatrix.from_labels(t[70:], p[70:], 4)
        assert parts == whole
        acc = ConfusionMatrix.zeros(4)
        acc.add(t[:100], p[:100])
        acc.add(t[100:], p[100:])
        assert acc == whole

    @pytest.mark.parametrize("bad", [[[1, 2]], [[1, -1], [0, 2]], [[0.5, 0], [0, 1]]])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            ConfusionMatrix(bad)

    def test_label_range(self):
        with pytest.raises(ValueError):
            ConfusionMatrix.from_labels([0, 3], [0, 0], 3)


class TestKappa:
    def test_diagonal(self):
        assert kappa(np.diag([3, 7, 2])) == 1.0
        assert oa_aa(np.diag([3, 7, 2]))[:2] == (1.0, 1.0)

    def test_chance_level(self):
        ag = agreement([[25, 25], [25, 25]])
        assert ag.p_o == ag.p_e == Fraction(1, 2)
        assert ag.kappa == 0 and "degenerate-independent" in ag.flags

    def test_worked_case(self):
        ag = agreement([[50, 10], [5, 35]])
        assert ag.p_o == Fraction(85, 100) and ag.p_e == Fraction(51, 100)
        assert ag.kappa == Fraction(34, 49)
        assert abs(kappa([[50, 10], [5, 35]]) - 0.6938775510204082) < 1e-15

    def test_concentrated(self):
        ag = agreement([[9, 0], [0, 0]])
        assert ag.kappa == 1 and "degenerate-concentrated" in ag.flags
        # chance agreement of 1 forces every sample into one diagonal cell
        for m in random_matrices(300, seed=2):
            assert ("degenerate-concentrated" in agreement(m).flags) == (np.count_nonzero(m) == 1 and m.trace() == m.sum())

    def test_empty(self):
        with pytest.raises(ValueError):
            kappa(ConfusionMatrix.zeros(3))
        with pytest.raises(ValueError):
            oa_aa(ConfusionMatrix.zeros(3))

    def test_thousand_random_matrices_exact(self):
        for m in random_matrices(1000):
            p_o, aa, k, p_e = brute_force(m.tolist())
            ag = agreement(m)
            oa, got_aa, _ = oa_aa(m)
            assert ag.p_o == p_o and ag.p_e == p_e and ag.kappa == k
            assert oa == float(p_o) and got_aa == float(aa)
            assert -1 <= ag.kappa <= 1
            off_diag = m.sum() - np.trace(m)
            assert (ag.kappa == 1) == (off_diag == 0)

    def test_oa_is_p_o(self):
        for m in random_matrices(50, seed=3):
            assert oa_aa(m)[0] == float(agreement(m).p_o)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        for m in random_matrices(100, seed=5):
            perm = rng.permutation(len(m))
            pm = m[np.ix_(perm, perm)]
            assert agreement(pm).kappa == agreement(m).kappa
            assert oa_aa(pm)[:2] == oa_aa(m)[:2]


class TestAccuracy:
    def test_absent_class_excluded(self):
        m = [[4, 1, 0], [0, 0, 0], [1, 0, 3]]
        oa, aa, rec = oa_aa(m)
        assert np.isnan(rec[1])
        assert aa == float((Fraction(4, 5) + Fraction(3, 4)) / 2)
        rep = MetricsReport.from_matrix(ConfusionMatrix(m), "test")
        assert rep.absent_classes == [2] and rep.recall[1] is None

    def test_loop_oracle_recall(self):
        for m in random_matrices(100, seed=6):
            _, _, rec = oa_aa(m)
            for i in range(len(m)):
                row = int(m[i].sum())
                if row:
                    assert rec[i] == m[i, i] / row
                else:
                    assert np.isnan(rec[i])

    def test_report_text_and_json(self):
        rep = MetricsReport.from_matrix(ConfusionMatrix([[50, 10], [5, 35]]), "val")
        text = rep.to_text()
        assert "role val" in text and "kappa 0.6939" in text and "OA 0.8500" in text
        d = json.loads(rep.to_json())
        assert d["total"] == 100 and d["per_class"][0]["support"] == 60


class TestMaps:
    def test_palette_fixed_and_distinct(self):
        assert tuple(PALETTE[0]) == (0, 0, 0)
        p = palette(40)
        assert p.shape == (41, 3)
        assert np.array_equal(palette(40), p)
        assert len({tuple(c) for c in p}) == 41
        assert np.array_equal(palette(3), PALETTE[:4])

    def test_all_correct_equals_ground_truth(self):
        rng = np.random.default_rng(0)
        gt = rng.integers(1, 5, size=(6, 7))
        pix = np.array([3, 10, 11, 25, 40])
        img = class_map(gt.shape, pix, gt.ravel()[pix], 4)
        flat = img.reshape(-1, 3)
        assert np.array_equal(flat[pix], palette(4)[gt.ravel()[pix]])

    def test_nonblack_count_equals_role_size(self, tmp_path):
        rng = np.random.default_rng(1)
        pix = rng.choice(12 * 9, size=37, replace=False)
        pred = rng.integers(1, 6, size=37)
        emit_map(tmp_path / "m.ppm", (12, 9), pix, pix, pred, 5)
        img = read_ppm(tmp_path / "m.ppm")
        assert img.shape == (12, 9, 3)
        assert int(np.any(img != 0, axis=-1).sum()) == 37

    def test_empty_role_black(self, tmp_path):
        emit_map(tmp_path / "e.ppm", (4, 5), [], [], [], 3)
        raw = (tmp_path / "e.ppm").read_bytes()
        assert raw.startswith(b"P6\n5 4\n255\n")
        assert not np.any(read_ppm(tmp_path / "e.ppm"))

    def test_pixel_set_mismatch(self, tmp_path):
        with pytest.raises(ValueError):
            emit_map(tmp_path / "x.ppm", (4, 4), [1, 2, 3], [1, 2], [1, 1], 2)
        assert not (tmp_path / "x.ppm").exists()

    def test_class_range(self):
        with pytest.raises(ValueError):
            class_map((2, 2), [0], [3], 2)
