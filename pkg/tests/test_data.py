import csv
import json
import warnings

import numpy as np
import pytest

from pacclearn.constraints import SampleSet
from pacclearn.data import (
    BinQuantiles,
    ColumnSpec,
    DatasetSchema,
    GroupLevels,
    bin_values,
    fairness_schema,
    load_dataset,
    make_biased_population,
    make_moons,
    quantile_edges,
    split,
    write_csv,
)
from pacclearn.errors import SchemaError
from pacclearn.config import builtin_path


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_inline_csv_shapes(tmp_path):
    p = _write(tmp_path, "a,color,y\n1.0,red,0\n2.0,blue,1\n3.0,red,1\n")
    schema = DatasetSchema([ColumnSpec("a"), ColumnSpec("color", "categorical"), ColumnSpec("y", "categorical", "label")])
    data, meta = load_dataset(p, schema)
    assert len(data) == 3 and data.dim == 3
    np.testing.assert_array_equal(data.features[:, 0], [0.0, 0.5, 1.0])
    assert meta.groups["color"].levels == ("blue", "red")
    np.testing.assert_array_equal(data.labels, [0, 1, 1])


def test_quoted_fields(tmp_path):
    p = _write(tmp_path, 'a,city,y\n1,"Paris, FR",0\n2,"Rome, IT",1\n')
    schema = DatasetSchema([ColumnSpec("a"), ColumnSpec("city", "categorical"), ColumnSpec("y", "categorical", "label")])
    _, meta = load_dataset(p, schema)
    assert meta.groups["city"].levels == ("Paris, FR", "Rome, IT")


def test_quantile_binning_ties_low():
    v = np.arange(1, 11, dtype=float)
    edges = quantile_edges(v, 2)
    assert edges.tolist() == [5.5]
    assert bin_values(v, edges).tolist() == [0] * 5 + [1] * 5
    assert bin_values([5.5, 5.6], [5.5]).tolist() == [0, 1]


def test_bin_quantiles_transform(tmp_path):
    rows = "\n".join(f"{i},{i % 2}" for i in range(1, 11))
    p = _write(tmp_path, "v,y\n" + rows + "\n")
    schema = DatasetSchema([ColumnSpec("v"), ColumnSpec("y", "categorical", "label")], [BinQuantiles("v", 2)])
    data, meta = load_dataset(p, schema)
    assert meta.groups["v"].levels == ("bin0", "bin1")
    np.testing.assert_array_equal(data.features[:, 1], [0] * 5 + [1] * 5)


def test_group_levels_shrinks_width(tmp_path):
    p = _write(tmp_path, "m,y\nDivorced,0\nSeparated,1\nNever-married,0\n")
    cols = [ColumnSpec("m", "categorical"), ColumnSpec("y", "categorical", "label")]
    plain, _ = load_dataset(p, DatasetSchema(cols))
    grouped, meta = load_dataset(p, DatasetSchema(cols, [GroupLevels("m", {"Divorced": "DS", "Separated": "DS"})]))
    assert grouped.dim == plain.dim - 1
    assert meta.decode_row(grouped.features[0])["m"] == meta.decode_row(grouped.features[1])["m"] == "DS"


def test_unknown_level_names_row_and_column(tmp_path):
    p = _write(tmp_path, "c,y\nred,0\npurple,1\n")
    schema = DatasetSchema([ColumnSpec("c", "categorical", levels=("red", "blue")), ColumnSpec("y", "categorical", "label")])
    with pytest.raises(SchemaError, match=r"row 2, column 'c'"):
        load_dataset(p, schema)
    caught = DatasetSchema(
        [ColumnSpec("c", "categorical", levels=("red", "other")), ColumnSpec("y", "categorical", "label")],
        [GroupLevels("c", {}, catch_all="other")],
    )
    _, meta = load_dataset(p, caught)
    assert meta.categorical["c"].tolist() == ["red", "other"]


def test_missing_values_drop_or_error(tmp_path):
    p = _write(tmp_path, "a,c,y\n1,?,0\n2,x,1\n3,y,0\n")
    cols = [ColumnSpec("a"), ColumnSpec("c", "categorical"), ColumnSpec("y", "categorical", "label")]
    data, meta = load_dataset(p, DatasetSchema(cols))
    assert len(data) == 2 and meta.rows.tolist() == [2, 3]
    with pytest.raises(SchemaError, match="row 1"):
        load_dataset(p, DatasetSchema(cols, missing="error"))


def test_schema_validation():
    with pytest.raises(SchemaError):
        DatasetSchema([ColumnSpec("a")])
    with pytest.raises(SchemaError):
        DatasetSchema([ColumnSpec("a", role="protected"), ColumnSpec("y", "categorical", "label")])
    with pytest.raises(SchemaError):
        DatasetSchema([ColumnSpec("y", "categorical", "label")], [BinQuantiles("zz", 2)])
    with pytest.raises(SchemaError):
        ColumnSpec("a", "text")


def test_header_mismatch(tmp_path):
    p = _write(tmp_path, "a,b\n1,0\n")
    with pytest.raises(SchemaError):
        load_dataset(p, DatasetSchema([ColumnSpec("a"), ColumnSpec("y", "categorical", "label")]))


def test_nonnumeric_value_is_reported(tmp_path):
    p = _write(tmp_path, "a,y\n1,0\nabc,1\n")
    with pytest.raises(SchemaError, match=r"row 2, column 'a'"):
        load_dataset(p, DatasetSchema([ColumnSpec("a"), ColumnSpec("y", "categorical", "label")]))


def test_one_hot_round_trip():
    path = builtin_path("fairness_small.csv")
    data, meta = load_dataset(path, fairness_schema())
    for n in range(len(data)):
        dec = meta.decode_row(data.features[n])
        assert dec["group"] == meta.categorical["group"][n]
        assert dec["gender"] == meta.categorical["gender"][n]


def test_loading_is_deterministic():
    path = builtin_path("fairness_small.csv")
    a, _ = load_dataset(path, fairness_schema())
    b, _ = load_dataset(path, fairness_schema())
    assert a.features.tobytes() == b.features.tobytes()
    assert np.all((a.features >= 0) & (a.features <= 1))


def test_bundled_schema_files_match_builtin():
    s = DatasetSchema.load(builtin_path("fairness_schema.json"))
    assert s.names == fairness_schema().names


def test_adult_schema_on_synthetic_rows(tmp_path):
    schema = DatasetSchema.load(builtin_path("adult_schema.json"))
    header = schema.names
    rng = np.random.default_rng(0)
    educ = ["Bachelors", "9th", "Preschool", "Masters", "HS-grad"]
    marital = ["Married-civ-spouse", "Divorced", "Separated", "Never-married", "Married-AF-spouse"]
    race = ["White", "Black", "Other", "Amer-Indian-Eskimo"]
    country = ["United-States", "Puerto-Rico", "Cuba", "England", "China", "Taiwan", "Mexico", "?"]
    rows = []
    for i in range(60):
        rows.append([
            str(18 + i), "Private", "1000", educ[i % 5], "9", marital[i % 5], "Sales", "Husband",
            race[i % 4], ["Female", "Male"][i % 2], "0", "0", str([20, 40, 45, 60][i % 4]),
            country[i % 8], ["<=50K", ">50K"][i % 3 == 0],
        ])
    p = tmp_path / "adult.csv"
    write_csv(p, header, rows)
    data, meta = load_dataset(p, schema)
    assert len(data) == 60 - sum(1 for i in range(60) if i % 8 == 7)
    for dropped in ("fnlwgt", "educational-num", "relationship", "capital-gain", "capital-loss"):
        assert dropped not in meta.groups and dropped not in meta.numeric
    assert "Preschool-12th" in meta.groups["education"].levels and "9th" not in meta.groups["education"].levels
    assert set(meta.groups["marital-status"].levels) == {"Married", "Divorced-Separated", "Never-married"}
    assert set(meta.groups["race"].levels) == {"White", "Black", "Other"}
    assert set(meta.groups["native-country"].levels) == {"United-States", "Latin-America", "Europe", "China", "Mexico"}
    assert len(meta.groups["age"].levels) == 6
    assert meta.groups["hours-per-week"].levels == ("bin0", "bin1")
    hours = meta.categorical["hours-per-week"]
    assert set(hours[meta.categorical["age"] != ""].tolist()) == {"bin0", "bin1"}


def test_split_degenerate_and_deterministic():
    rng = np.random.default_rng(0)
    data = SampleSet(rng.random((100, 2)), np.arange(100) % 2)
    s = split(data, (1.0, 0.0, 0.0), seed=0)
    np.testing.assert_array_equal(s.train.features, data.features)
    assert s.validation is None and s.test is None
    a = split(data, (0.6, 0.2, 0.2), seed=3)
    b = split(data, (0.6, 0.2, 0.2), seed=3)
    for u, v in zip(a.indices, b.indices):
        np.testing.assert_array_equal(u, v)
    allidx = np.concatenate(a.indices)
    assert sorted(allidx.tolist()) == list(range(100))


def test_split_is_stratified():
    rng = np.random.default_rng(1)
    data = SampleSet(rng.random((100, 2)), np.arange(100) % 2)
    s = split(data, (0.8, 0.0, 0.2), seed=0)
    assert np.bincount(s.test.labels).tolist() == [10, 10]


def test_split_warns_on_missing_label():
    data = SampleSet(np.zeros((5, 1)), np.array([0, 0, 0, 0, 1]))
    with pytest.warns(UserWarning):
        split(data, (0.9, 0.0, 0.1), seed=0)


def test_biased_population_generator():
    rows = make_biased_population(500, seed=3)
    assert len(rows) == 500 and len(rows[0]) == 6
    assert {r[4] for r in rows} == {"Female", "Male"}
    assert rows == make_biased_population(500, seed=3)
    hard = make_biased_population(500, seed=3, gender_effect=0.0, hard_group_effect=6.0)
    assert {r[3] for r in hard} <= {"A", "B", "C", "D"}


def test_moons_in_unit_box():
    m = make_moons(400, 0.1, seed=0)
    assert m.features.min() >= 0 and m.features.max() <= 1
    assert np.bincount(m.labels).tolist() == [200, 200]
