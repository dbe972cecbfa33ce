"""Download the UCI Adult census data and write it as one CSV with a header.

The two raw files (train and test parts) are merged. Each download is
checked against a SHA-256 digest: pass ``--sha256-data`` / ``--sha256-test``
to pin known digests, otherwise the digests seen on the first download are
recorded in ``<output>.sha256`` and every later run must match them.

    python scripts/fetch_adult.py --output data/adult.csv
"""

import argparse
import csv
import hashlib
import io
import json
import sys
import urllib.request
from pathlib import Path

BASE = "https://archive.ics.uci.edu/ml/machine-learning-databases/adult/"
FILES = {"data": "adult.data", "test": "adult.test"}
HEADER = [
    "age", "workclass", "fnlwgt", "education", "educational-num", "marital-status",
    "occupation", "relationship", "race", "gender", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
]


def fetch(url):
    with urllib.request.urlopen(url, timeout=60) as resp:
        return resp.read()


def parse(raw):
    rows = []
    for row in csv.reader(io.StringIO(raw.decode("utf-8")), skipinitialspace=True):
        if len(row) != len(HEADER):
            continue  # blank lines and the test file's "|1x3 Cross validator" banner
        row = [v.strip() for v in row]
        row[-1] = row[-1].rstrip(".")
        rows.append(row)
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--output", default="data/adult.csv")
    p.add_argument("--base-url", default=BASE)
    p.add_argument("--sha256-data")
    p.add_argument("--sha256-test")
    args = p.parse_args(argv)

    out = Path(args.output)
    pin_file = out.with_name(out.name + ".sha256")
    pinned = json.loads(pin_file.read_text()) if pin_file.is_file() else {}
    for key, flag in (("data", args.sha256_data), ("test", args.sha256_test)):
        if flag:
            pinned[key] = flag.lower()

    rows, seen = [], {}
    for key, name in FILES.items():
        raw = fetch(args.base_url + name)
        digest = hashlib.sha256(raw).hexdigest()
        seen[key] = digest
        if key in pinned and pinned[key] != digest:
            print(f"checksum mismatch for {name}: expected {pinned[key]}, got {digest}", file=sys.stderr)
            return 1
        rows.extend(parse(raw))

    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        w.writerows(rows)
    if not pin_file.is_file():
        pin_file.write_text(json.dumps(seen, indent=2) + "\n")
        print(f"recorded digests in {pin_file}")
    print(f"wrote {len(rows)} rows to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
