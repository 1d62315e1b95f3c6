import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paretomoe.data import (
    LaggedDataset,
    Normalizer,
    RawSeries,
    SplitSpec,
    lag_embed,
    load_csv,
    prepare,
    split,
    split_sizes,
    synth_sru,
    write_csv,
)
from paretomoe.errors import DataError, DomainError, SchemaError

HEADER = "x1,x2,x3,x4,x5,y1,y2\n"


def _write(tmp_path, body, header=HEADER):
    p = tmp_path / "plant.csv"
    p.write_text(header + body)
    return p


class TestLoad:
    def test_reads_columns(self, tmp_path):
        raw = load_csv(_write(tmp_path, "1,2,3,4,5,0.1,0.2\n6,7,8,9,10,0.3,0.4\n"))
        np.testing.assert_array_equal(raw.X, [[1, 2, 3, 4, 5], [6, 7, 8, 9, 10]])
        np.testing.assert_array_equal(raw.Y, [[0.1, 0.2], [0.3, 0.4]])
        assert raw.dropped == 0 and raw.units["y1"] == "mol/m3"

    def test_column_order_irrelevant(self, tmp_path):
        raw = load_csv(_write(tmp_path, "0.2,1,2,3,4,5,0.1\n", header="y2,x1,x2,x3,x4,x5,y1\n"))
        np.testing.assert_array_equal(raw.Y, [[0.1, 0.2]])

    def test_null_rows_dropped(self, tmp_path):
        raw = load_csv(_write(tmp_path, "1,2,3,4,5,0.1,0.2\n1,2,,4,5,0.1,0.2\n1,2,3,4,5,NaN,0.2\n"))
        assert len(raw) == 1 and raw.dropped == 2

    def test_missing_column(self, tmp_path):
        with pytest.raises(SchemaError, match="'y2'"):
            load_csv(_write(tmp_path, "1,2,3,4,5,0.1\n", header="x1,x2,x3,x4,x5,y1\n"))

    def test_unparsable_names_line(self, tmp_path):
        with pytest.raises(DataError, match="line 3"):
            load_csv(_write(tmp_path, "1,2,3,4,5,0.1,0.2\n1,2,abc,4,5,0.1,0.2\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(tmp_path / "nope.csv")

    def test_time_must_increase(self):
        with pytest.raises(DataError):
            RawSeries(np.zeros((3, 1)), np.zeros((3, 1)), time=np.array([0.0, 2.0, 1.0]))

    def test_round_trip(self, tmp_path):
        raw = synth_sru(1, rows=30)
        write_csv(raw, tmp_path / "s.csv")
        back = load_csv(tmp_path / "s.csv")
        np.testing.assert_array_equal(back.X, raw.X)
        np.testing.assert_array_equal(back.Y, raw.Y)


class TestLag:
    def test_hand_example(self):
        raw = RawSeries(np.array([[1.0], [2.0], [3.0], [4.0]]), np.zeros((4, 1)))
        ds = lag_embed(raw, 3)
        np.testing.assert_array_equal(ds.X, [[3, 2, 1], [4, 3, 2]])
        np.testing.assert_array_equal(ds.times, [2.0, 3.0])

    def test_width(self):
        ds = lag_embed(synth_sru(0, rows=40), 10)
        assert ds.X.shape == (31, 50)

    def test_exactly_L_rows(self):
        assert len(lag_embed(synth_sru(0, rows=20), 20)) == 1

    def test_too_short(self):
        with pytest.raises(DomainError):
            lag_embed(synth_sru(0, rows=20), 21)

    def test_variable_major_layout(self):
        # column d*L + z holds variable d at lag z; check against direct indexing
        raw = synth_sru(2, rows=25)
        L = 4
        ds = lag_embed(raw, L)
        for i in (0, 7, len(ds) - 1):
            t = i + L - 1
            for d in range(5):
                for z in range(L):
                    assert ds.X[i, d * L + z] == raw.X[t - z, d]
            np.testing.assert_array_equal(ds.Y[i], raw.Y[t])


class TestSplit:
    @pytest.mark.parametrize("n,sizes", [(10000, (6000, 2000, 2000)), (10, (6, 2, 2)), (11, (6, 2, 3))])
    def test_sizes(self, n, sizes):
        assert split_sizes(n) == sizes

    def test_too_small(self):
        ds = LaggedDataset(np.zeros((4, 1)), np.zeros((4, 1)), np.arange(4.0))
        with pytest.raises(DomainError):
            split(ds)

    def test_bad_fractions(self):
        with pytest.raises(DomainError):
            SplitSpec((0.5, 0.5, 0.5))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(5, 5000))
    def test_contiguous_ordered_cover(self, n):
        ds = LaggedDataset(np.arange(n, dtype=float)[:, None], np.zeros((n, 1)), np.arange(n, dtype=float))
        parts = split(ds)
        joined = np.concatenate([p.times for p in parts])
        np.testing.assert_array_equal(joined, np.arange(n))
        assert parts[0].times.max() < parts[1].times.min() <= parts[1].times.max() < parts[2].times.min()


class TestNormalizer:
    def test_train_moments(self):
        A = np.random.default_rng(0).normal(3.0, 2.0, size=(500, 4))
        Z = Normalizer.fit(A).transform(A)
        np.testing.assert_allclose(Z.mean(0), 0.0, atol=1e-12)
        np.testing.assert_allclose(Z.std(0), 1.0, atol=1e-12)

    def test_constant_column(self):
        A = np.column_stack([np.full(5, 2.0), np.arange(5.0)])
        Z = Normalizer.fit(A).transform(A)
        np.testing.assert_array_equal(Z[:, 0], 0.0)

    def test_inverse(self):
        A = np.random.default_rng(1).normal(size=(20, 3))
        n = Normalizer.fit(A)
        np.testing.assert_allclose(n.inverse(n.transform(A)), A, rtol=1e-13, atol=1e-13)

    def test_prepare_fits_on_train_only(self):
        data = prepare(lag_embed(synth_sru(0, rows=200)))
        np.testing.assert_allclose(data.train.X.mean(0), 0.0, atol=1e-12)
        assert np.abs(data.test.X.mean(0)).max() > 1e-6


class TestSynth:
    def test_deterministic(self):
        a, b = synth_sru(5, rows=300), synth_sru(5, rows=300)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.Y, b.Y)

    def test_seeds_differ(self):
        assert not np.array_equal(synth_sru(0, rows=100).Y, synth_sru(1, rows=100).Y)

    def test_anticorrelated(self):
        for seed in range(3):
            Y = synth_sru(seed, rows=10_000).Y
            assert np.corrcoef(Y.T)[0, 1] < 0

    def test_shape_and_rows_floor(self):
        raw = synth_sru(0, rows=20)
        assert raw.X.shape == (20, 5) and raw.Y.shape == (20, 2)
        with pytest.raises(DomainError):
            synth_sru(0, rows=19)

    def test_default_split(self):
        data = prepare(lag_embed(synth_sru(0)))
        assert (len(data.train), len(data.val), len(data.test)) == (5994, 1998, 1999)
        assert data.D_in == 50 and data.K == 2
        assert data.checksum() == prepare(lag_embed(synth_sru(0))).checksum()
