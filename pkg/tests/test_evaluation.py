import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layered_jscc.channel import LayerPlan, PlanError
from layered_jscc.evaluation import (CSV_CONVENTION, Accumulator, check_divisible, evaluate,
                                     layer_count_sweep, read_results_csv, row_lookup,
                                     snr_mismatch_sweep, write_results_csv)
from layered_jscc.schemes import build_model


@pytest.fixture(scope="module")
def imgs():
    rng = np.random.default_rng(77)
    return rng.integers(0, 256, (12, 4, 4, 3), dtype=np.uint8).repeat(8, 1).repeat(8, 2)


@pytest.fixture(scope="module")
def sr2():
    return build_model("sr_multi", LayerPlan((4, 4)), seed=1)


def _ev(model, imgs, snrs, **kw):
    kw.setdefault("trained", True)
    return evaluate(model, imgs, snrs, **kw)


class TestAccumulator:
    @settings(max_examples=40)
    @given(st.lists(st.lists(st.floats(-50, 50), max_size=20), min_size=1, max_size=6))
    def test_chunked_matches_numpy(self, chunks):
        acc = Accumulator()
        for c in chunks:
            acc.add(np.array(c))
        flat = np.concatenate([np.array(c, dtype=float) for c in chunks])
        if flat.size == 0:
            assert acc.n == 0
            return
        assert acc.mean == pytest.approx(flat.mean(), abs=1e-9)
        if flat.size > 1:
            assert acc.std == pytest.approx(flat.std(ddof=1), abs=1e-7)


class TestEvaluate:
    def test_table_complete(self, sr2, imgs):
        rows = _ev(sr2, imgs, [0, 5, 10], R=1)
        assert len(rows) == 3 * 2
        assert {(r.test_snr, r.subset) for r in rows} == {(s, b) for s in (0.0, 5.0, 10.0) for b in ("01", "11")}
        assert all(r.n_images == 12 and r.R == 1 and r.c == 8 for r in rows)

    def test_noiseless_independent_of_r(self, sr2, imgs):
        one = _ev(sr2, imgs, [math.inf], R=1)
        four = _ev(sr2, imgs, [math.inf], R=4)
        for a, b in zip(one, four):
            assert a.mean_psnr == pytest.approx(b.mean_psnr, abs=1e-9)

    def test_stderr_shrinks_with_realizations(self, sr2, imgs):
        a = _ev(sr2, imgs, [0.0], subsets=["11"], R=4)[0]
        b = _ev(sr2, imgs, [0.0], subsets=["11"], R=16)[0]
        assert a.stderr / b.stderr == pytest.approx(2.0, rel=0.2)

    def test_seeded(self, sr2, imgs):
        a = _ev(sr2, imgs, [3.0], R=2, seed=5)
        b = _ev(sr2, imgs, [3.0], R=2, seed=5)
        c = _ev(sr2, imgs, [3.0], R=2, seed=6)
        assert [r.mean_psnr for r in a] == [r.mean_psnr for r in b]
        assert [r.mean_psnr for r in a] != [r.mean_psnr for r in c]

    def test_snr_rows_do_not_depend_on_batch_of_snrs(self, sr2, imgs):
        alone = _ev(sr2, imgs, [7.0], R=2)
        mixed = _ev(sr2, imgs, [1.0, 7.0], R=2)
        assert [r.mean_psnr for r in alone] == [r.mean_psnr for r in mixed if r.test_snr == 7.0]

    def test_batch_size_irrelevant_to_mean(self, sr2, imgs):
        a = _ev(sr2, imgs, [math.inf], R=1, batch_size=12)
        b = _ev(sr2, imgs, [math.inf], R=1, batch_size=5)
        for ra, rb in zip(a, b):
            assert ra.mean_psnr == pytest.approx(rb.mean_psnr, abs=1e-4)

    def test_untrained_warns(self, sr2, imgs):
        with pytest.warns(UserWarning, match="untrained"):
            evaluate(sr2, imgs[:2], [10.0], R=1, trained=False)

    def test_bad_r(self, sr2, imgs):
        with pytest.raises(ValueError):
            _ev(sr2, imgs, [1.0], R=0)

    def test_subset_selection(self, imgs):
        md = build_model("md_multi", LayerPlan((4, 4)))
        rows = _ev(md, imgs, [10.0], subsets=["[2]"], R=1)
        assert [r.subset for r in rows] == ["10"]


class TestSweeps:
    def test_mismatch_diagonal_and_envelope(self, imgs):
        models = {0.0: build_model("sr_multi", LayerPlan((4,)), seed=0),
                  10.0: build_model("sr_multi", LayerPlan((4,)), seed=1)}
        grid, env = snr_mismatch_sweep(models, imgs, [0.0, 10.0], R=1)
        assert len(grid) == 4 and len(env) == 2
        look = row_lookup(grid)
        direct = _ev(models[10.0], imgs, [10.0], R=1, train_snr=10.0)[0]
        assert look[(10.0, 10.0, "1")].mean_psnr == direct.mean_psnr
        for e in env:
            same = [r.mean_psnr for r in grid if r.test_snr == e.test_snr]
            assert e.mean_psnr == max(same)
            assert e.extra["envelope_of"] in models

    def test_layer_count_ratios(self, imgs):
        rows = layer_count_sweep(lambda L: build_model("sr_multi", LayerPlan.uniform(8, L)),
                                 8, [1, 2], imgs, 10.0, R=1)
        ratios = sorted((r.L, r.extra["cum_ratio"]) for r in rows)
        assert ratios == [(1, pytest.approx(8 / 48)), (2, pytest.approx(4 / 48)), (2, pytest.approx(8 / 48))]

    def test_indivisible(self):
        with pytest.raises(PlanError):
            check_divisible(12, [5])
        with pytest.raises(PlanError):
            check_divisible(12, [4])  # depth 3 per layer is odd
        check_divisible(12, [1, 2, 3, 6])


def test_csv_roundtrip(tmp_path, sr2, imgs):
    rows = _ev(sr2, imgs, [0.0, math.inf], R=1, extra={"weight": 0.25})
    path = write_results_csv(rows, tmp_path / "r.csv")
    assert path.read_text().splitlines()[0] == CSV_CONVENTION
    back = read_results_csv(path)
    assert len(back) == len(rows)
    for r, d in zip(rows, back):
        assert d["subset"] == r.subset
        assert d["test_snr"] == r.test_snr
        assert d["mean_psnr"] == pytest.approx(r.mean_psnr, abs=1e-6)
        assert d["weight"] == 0.25 and d["train_snr"] is None
