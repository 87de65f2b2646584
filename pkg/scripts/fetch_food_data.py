"""Download the 872-food nutrition table and write ``tests/data/nutrition.csv``.

The source is an ``.xls`` workbook, so reading it needs ``pandas`` and
``xlrd`` (``pip install pandas xlrd``).  Columns are matched by name prefix
and written as ``Calories,Fat,Protein,Carbs``.

Usage::

    python scripts/fetch_food_data.py [--source FILE_OR_URL] [--out PATH]
"""

from __future__ import annotations

import argparse
import io
import sys
import urllib.request
from pathlib import Path

URL = "https://www.csun.edu/science/ref/spreadsheets/xls/nutrition.xls"
DEFAULT_OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "nutrition.csv"
EXPECTED_ROWS = 872
PREFIXES = {"Calories": ("calor", "energ"), "Fat": ("fat",), "Protein": ("prot",), "Carbs": ("carb",)}


def _read_source(source: str) -> bytes:
    if source.startswith(("http://", "https://")):
        with urllib.request.urlopen(source, timeout=60) as resp:
            return resp.read()
    return Path(source).read_bytes()


def _pick(columns, prefixes):
    hits = [c for c in columns if str(c).strip().lower().startswith(prefixes)]
    if len(hits) != 1:
        raise SystemExit(f"cannot identify column for prefixes {prefixes}: candidates {hits}")
    return hits[0]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--source", default=URL, help="workbook path or URL")
    ap.add_argument("--out", default=str(DEFAULT_OUT))
    args = ap.parse_args(argv)

    import pandas as pd

    raw = _read_source(args.source)
    frame = pd.read_excel(io.BytesIO(raw))
    cols = {name: _pick(frame.columns, p) for name, p in PREFIXES.items()}
    table = frame[list(cols.values())].rename(columns={v: k for k, v in cols.items()})
    table = table.apply(pd.to_numeric, errors="coerce").dropna()
    if len(table) != EXPECTED_ROWS:
        print(f"warning: {len(table)} complete rows, expected {EXPECTED_ROWS}", file=sys.stderr)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out, index=False)
    print(f"wrote {len(table)} rows to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
