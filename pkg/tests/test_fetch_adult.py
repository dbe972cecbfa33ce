import csv
import hashlib
import importlib.util
import json
from pathlib import Path

import numpy as np

from pacclearn.config import builtin_path
from pacclearn.data import DatasetSchema, load_dataset

SCRIPT = Path(__file__).resolve().parents[1] / "scripts" / "fetch_adult.py"
spec = importlib.util.spec_from_file_location("fetch_adult", SCRIPT)
fetch_adult = importlib.util.module_from_spec(spec)
spec.loader.exec_module(fetch_adult)

TRAIN = (
    "39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 2174, 0, 40, United-States, <=50K\n"
    "50, Self-emp-not-inc, 83311, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, White, Male, 0, 0, 13, United-States, <=50K\n"
    "31, Private, 45781, Masters, 14, Never-married, Prof-specialty, Not-in-family, White, Female, 14084, 0, 50, United-States, >50K\n"
    "\n"
)
TEST = (
    "|1x3 Cross validator\n"
    "25, Private, 226802, 11th, 7, Never-married, Machine-op-inspct, Own-child, Black, Male, 0, 0, 40, United-States, <=50K.\n"
    "44, Private, 160323, Some-college, 10, Married-civ-spouse, Machine-op-inspct, Husband, Black, Male, 7688, 0, 40, Mexico, >50K.\n"
)


def _serve(tmp_path):
    src = tmp_path / "mirror"
    src.mkdir()
    (src / "adult.data").write_text(TRAIN)
    (src / "adult.test").write_text(TEST)
    return src.as_uri() + "/"


def test_fetch_merges_and_records_digests(tmp_path):
    base = _serve(tmp_path)
    out = tmp_path / "data" / "adult.csv"
    assert fetch_adult.main(["--output", str(out), "--base-url", base]) == 0
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == fetch_adult.HEADER
    assert len(rows) == 6
    assert [r[-1] for r in rows[1:]] == ["<=50K", "<=50K", ">50K", "<=50K", ">50K"]
    digests = json.loads((tmp_path / "data" / "adult.csv.sha256").read_text())
    assert digests["data"] == hashlib.sha256(TRAIN.encode()).hexdigest()
    # second run matches the recorded digests
    assert fetch_adult.main(["--output", str(out), "--base-url", base]) == 0


def test_fetch_rejects_changed_file(tmp_path):
    base = _serve(tmp_path)
    out = tmp_path / "adult.csv"
    assert fetch_adult.main(["--output", str(out), "--base-url", base]) == 0
    (tmp_path / "mirror" / "adult.data").write_text(TRAIN.replace("39", "40"))
    assert fetch_adult.main(["--output", str(out), "--base-url", base]) == 1


def test_fetch_pinned_digest(tmp_path):
    base = _serve(tmp_path)
    out = tmp_path / "adult.csv"
    assert fetch_adult.main(["--output", str(out), "--base-url", base, "--sha256-test", "0" * 64]) == 1
    assert not out.exists()


def test_fetched_file_loads_with_bundled_schema(tmp_path):
    base = _serve(tmp_path)
    out = tmp_path / "adult.csv"
    fetch_adult.main(["--output", str(out), "--base-url", base])
    data, meta = load_dataset(out, DatasetSchema.load(builtin_path("adult_schema.json")))
    assert len(data) == 5
    assert np.array_equal(data.labels, [0, 0, 1, 0, 1])
