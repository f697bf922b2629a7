"""Dataset loading, validation, and column transforms."""

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from hierlm import (
    ConfigError,
    DataError,
    Dataset,
    DegenerateScaleError,
    ParseError,
    SchemaError,
    cluster_mean,
    encode_categorical,
    group_index,
    interaction,
    load_long_csv,
    standardize,
)


def write_csv(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadLongCsv:
    def test_sorts_by_cluster_and_counts(self, tmp_path):
        path = write_csv(
            tmp_path,
            "school,score\nb,1.0\na,2.0\nb,3.0\na,4.0\n",
        )
        ds = load_long_csv(
            path, {"school": "categorical", "score": "numeric"}, cluster="school"
        )
        assert ds.n_rows == 4
        assert list(ds.frame["school"]) == ["a", "a", "b", "b"]
        # stable within cluster: original file order preserved
        assert list(ds.frame["score"]) == [2.0, 4.0, 1.0, 3.0]
        gi = group_index(ds)
        assert gi.n_clusters == 2
        assert gi.total_rows == 4

    def test_missing_tokens(self, tmp_path):
        path = write_csv(tmp_path, "g,y\na,1\na,NA\na,\nb,2\n")
        ds = load_long_csv(
            path, {"g": "categorical", "y": "numeric"}, cluster="g"
        )
        assert ds.n_rows == 4
        assert int(ds.frame["y"].isna().sum()) == 2

    def test_missing_cluster_rows_excluded(self, tmp_path):
        path = write_csv(tmp_path, "g,y\na,1\n,2\nNA,3\nb,4\n")
        ds = load_long_csv(
            path, {"g": "categorical", "y": "numeric"}, cluster="g"
        )
        assert ds.n_rows == 2
        assert ds.n_excluded == 2

    def test_single_row(self, tmp_path):
        path = write_csv(tmp_path, "g,y\na,1.5\n")
        ds = load_long_csv(path, {"g": "categorical", "y": "numeric"}, cluster="g")
        gi = group_index(ds)
        assert (gi.n_clusters, ds.n_rows) == (1, 1)

    def test_bad_numeric_cell_reports_row(self, tmp_path):
        path = write_csv(tmp_path, "g,y\na,1\na,oops\n")
        with pytest.raises(ParseError, match="row 2.*oops"):
            load_long_csv(path, {"g": "categorical", "y": "numeric"}, cluster="g")

    def test_unknown_schema_column(self, tmp_path):
        path = write_csv(tmp_path, "g,y\na,1\n")
        with pytest.raises(SchemaError, match="missing"):
            load_long_csv(
                path,
                {"g": "categorical", "missing": "numeric"},
                cluster="g",
            )

    def test_all_rows_excluded(self, tmp_path):
        path = write_csv(tmp_path, "g,y\n,1\n,2\n")
        with pytest.raises(DataError):
            load_long_csv(path, {"g": "categorical", "y": "numeric"}, cluster="g")

    def test_occasions_sorted_and_unique(self, tmp_path):
        path = write_csv(tmp_path, "g,occ,y\na,2,1\na,1,2\nb,1,3\n")
        ds = load_long_csv(
            path,
            {"g": "categorical", "occ": "numeric", "y": "numeric"},
            cluster="g",
            occasion="occ",
        )
        assert list(ds.frame["occ"]) == [1, 2, 1]

        dup = write_csv(tmp_path, "g,occ,y\na,1,1\na,1,2\n", name="dup.csv")
        with pytest.raises(DataError, match="duplicate"):
            load_long_csv(
                dup,
                {"g": "categorical", "occ": "numeric", "y": "numeric"},
                cluster="g",
                occasion="occ",
            )

    def test_round_trip_write(self, tmp_path):
        frame = pd.DataFrame({"g": ["a", "a", "b"], "y": [1.0, np.nan, 2.0]})
        ds = Dataset.from_frame(frame, cluster="g")
        out = tmp_path / "out.csv"
        ds.to_csv(out)
        again = load_long_csv(out, {"g": "categorical", "y": "numeric"}, cluster="g")
        assert again.n_rows == 3
        assert int(again.frame["y"].isna().sum()) == 1


class TestFromFrame:
    def test_rejects_infinities(self):
        frame = pd.DataFrame({"g": ["a", "a"], "y": [1.0, np.inf]})
        with pytest.raises(DataError, match="non-finite"):
            Dataset.from_frame(frame, cluster="g")

    def test_fractional_occasion_rejected(self):
        frame = pd.DataFrame({"g": ["a"], "occ": [1.5], "y": [0.0]})
        with pytest.raises(DataError, match="integer"):
            Dataset.from_frame(frame, cluster="g", occasion="occ")


class TestStandardize:
    def test_symmetric_three_points(self):
        ds = Dataset.from_frame(
            pd.DataFrame({"g": ["a"] * 3, "y": [1.0, 2.0, 3.0]}), cluster="g"
        )
        out = standardize(ds, "y")
        np.testing.assert_allclose(out.frame["y"], [-1.0, 0.0, 1.0])

    def test_two_point_hand_value(self):
        # (10, 20): mean 15, sd (n-1 divisor) = sqrt(50) -> +-1/sqrt(2)
        ds = Dataset.from_frame(
            pd.DataFrame({"g": ["a", "a"], "y": [10.0, 20.0]}), cluster="g"
        )
        out = standardize(ds, "y")
        np.testing.assert_allclose(
            out.frame["y"], [-0.7071067811865476, 0.7071067811865476]
        )

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        ds = Dataset.from_frame(
            pd.DataFrame({"g": ["a"] * 50, "y": rng.normal(3.0, 2.5, 50)}),
            cluster="g",
        )
        once = standardize(ds, "y")
        twice = standardize(once, "y")
        assert np.abs(once.frame["y"] - twice.frame["y"]).max() <= 1e-12
        assert abs(once.frame["y"].mean()) <= 1e-12
        assert abs(once.frame["y"].var(ddof=1) - 1.0) <= 1e-12

    def test_constant_column_rejected(self):
        ds = Dataset.from_frame(
            pd.DataFrame({"g": ["a", "a"], "y": [2.0, 2.0]}), cluster="g"
        )
        with pytest.raises(DegenerateScaleError):
            standardize(ds, "y")

    @given(
        hst.lists(hst.integers(-10**6, 10**6), min_size=3, max_size=30, unique=True)
    )
    @settings(max_examples=50, deadline=None)
    def test_preserves_rank_order(self, values):
        values = [float(v) for v in values]
        frame = pd.DataFrame({"g": ["a"] * len(values), "y": values})
        out = standardize(Dataset.from_frame(frame, cluster="g"), "y")
        assert list(np.argsort(out.frame["y"])) == list(np.argsort(values))


class TestClusterMean:
    def test_pair_mean(self):
        ds = Dataset.from_frame(
            pd.DataFrame({"g": ["a", "a"], "y": [0.0, 2.0]}), cluster="g"
        )
        out = cluster_mean(ds, "y")
        np.testing.assert_allclose(out.frame["y_mean"], [1.0, 1.0])

    def test_singletons_copy_column(self):
        ds = Dataset.from_frame(
            pd.DataFrame({"g": ["a", "b", "c"], "y": [1.0, 2.0, 3.0]}), cluster="g"
        )
        out = cluster_mean(ds, "y")
        np.testing.assert_allclose(out.frame["y_mean"], out.frame["y"])

    def test_constant_within_cluster_and_weighted_grand_mean(self):
        rng = np.random.default_rng(1)
        frame = pd.DataFrame(
            {
                "g": np.repeat([f"c{i}" for i in range(7)], rng.integers(1, 9, 7)),
            }
        )
        frame["y"] = rng.normal(size=len(frame))
        ds = Dataset.from_frame(frame, cluster="g")
        out = cluster_mean(ds, "y")
        for _, sub in out.frame.groupby("g"):
            assert sub["y_mean"].nunique() == 1
        assert np.isclose(out.frame["y_mean"].mean(), out.frame["y"].mean())


class TestEncodeCategorical:
    def frame(self):
        return Dataset.from_frame(
            pd.DataFrame(
                {
                    "school": [1, 1, 2, 2, 3, 3],
                    "gender": ["mixed", "boys", "girls", "mixed", "boys", "girls"],
                }
            ),
            cluster="school",
        )

    def test_reference_omitted(self):
        out = encode_categorical(self.frame(), "gender", reference="mixed")
        assert "gender_boys" in out.columns and "gender_girls" in out.columns
        assert "gender_mixed" not in out.columns
        indicators = out.frame[["gender_boys", "gender_girls"]].to_numpy()
        sums = indicators.sum(axis=1)
        is_ref = (out.frame["gender"] == "mixed").to_numpy()
        np.testing.assert_allclose(sums[is_ref], 0.0)
        np.testing.assert_allclose(sums[~is_ref], 1.0)

    def test_binary_single_indicator(self):
        ds = Dataset.from_frame(
            pd.DataFrame({"g": [1, 1], "sex": ["A", "B"]}), cluster="g"
        )
        out = encode_categorical(ds, "sex", reference="A")
        assert out.columns == ("g", "sex", "sex_B")

    def test_single_level_no_columns(self):
        ds = Dataset.from_frame(
            pd.DataFrame({"g": [1, 1], "c": ["only", "only"]}), cluster="g"
        )
        out = encode_categorical(ds, "c", reference="only")
        assert out.columns == ("g", "c")

    def test_unknown_reference(self):
        with pytest.raises(ConfigError, match="reference"):
            encode_categorical(self.frame(), "gender", reference="coed")


class TestInteraction:
    def test_product(self):
        ds = Dataset.from_frame(
            pd.DataFrame({"g": [1, 1, 1], "t": [0.2, 0.4, 1.0], "x": [1.0, 0.0, 0.0]}),
            cluster="g",
        )
        out = interaction(ds, "t", "x")
        np.testing.assert_allclose(out.frame["t_x_x"], [0.2, 0.0, 0.0])


class TestGroupIndex:
    def test_sizes_and_coverage(self):
        frame = pd.DataFrame(
            {"g": ["a"] * 2 + ["b"] * 3 + ["c"] * 4, "y": range(9)}
        )
        ds = Dataset.from_frame(frame, cluster="g")
        gi = group_index(ds)
        assert list(gi.sizes) == [2, 3, 4]
        assert gi.total_rows == 9
        seen = []
        for j in range(gi.n_clusters):
            seen.extend(range(*gi.rows(j).indices(ds.n_rows)))
        assert seen == list(range(9))

    def test_single_cluster(self):
        ds = Dataset.from_frame(
            pd.DataFrame({"g": ["a"] * 5, "y": range(5)}), cluster="g"
        )
        gi = group_index(ds)
        assert gi.n_clusters == 1
        assert list(gi.sizes) == [5]

    def test_unsorted_rejected(self):
        ds = Dataset.from_frame(
            pd.DataFrame({"g": ["a", "b", "a"], "y": [1.0, 2.0, 3.0]}), cluster="g"
        )
        shuffled = Dataset(
            frame=ds.frame.iloc[[0, 2, 1]].reset_index(drop=True),
            cluster_column="g",
        )
        with pytest.raises(DataError, match="sorted"):
            group_index(shuffled)
