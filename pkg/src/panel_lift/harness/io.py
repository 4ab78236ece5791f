"""Plain numeric CSV matrices and JSON documents."""

import json
import math
import os
from importlib import resources
from pathlib import Path

import numpy as np

from panel_lift.errors import InputError, ParseError


def read_matrix(path, header=False):
    """Parse a comma-separated numeric matrix.

    Errors carry the 1-based line and column of the offending cell.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", path=path) from exc
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if header and lineno == 1:
            continue
        if not line.strip():
            continue
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise ParseError(f"expected {width} fields, found {len(cells)}", path=path, line=lineno)
        row = []
        for col, cell in enumerate(cells, start=1):
            try:
                val = float(cell)
            except ValueError:
                raise ParseError(f"not a number: {cell.strip()!r}", path=path, line=lineno, column=col) from None
            if not math.isfinite(val):
                raise ParseError(f"non-finite value {cell.strip()!r}", path=path, line=lineno, column=col)
            row.append(val)
        rows.append(row)
    if not rows:
        raise ParseError("no data rows", path=path)
    return np.array(rows, dtype=float)


def read_treatment(path, header=False):
    z = read_matrix(path, header=header)
    bad = np.argwhere((z != 0.0) & (z != 1.0))
    if bad.size:
        i, j = bad[0]
        raise ParseError(
            f"treatment entries must be 0 or 1, found {z[i, j]!r}",
            path=path,
            line=int(i) + 1 + int(header),
            column=int(j) + 1,
        )
    return z


def format_matrix(a):
    # %.17g round-trips every double exactly
    return "".join(",".join(format(float(x), ".17g") for x in row) + "\n" for row in np.atleast_2d(a))


def write_matrix(path, a):
    Path(path).write_text(format_matrix(a))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        # JSON has no inf/nan
        return x if math.isfinite(x) else None
    return x


def dumps(doc):
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def write_json(path, doc):
    Path(path).write_text(dumps(doc))


def ensure_dir(path):
    path = Path(path)
    if path.exists() and not path.is_dir():
        raise InputError(f"{path} exists and is not a directory")
    os.makedirs(path, exist_ok=True)
    return path


def load_schema(name):
    """Shipped JSON schema for output document ``name`` (e.g. ``"estimate"``)."""
    ref = resources.files("panel_lift.harness").joinpath("schemas", f"{name}.schema.json")
    return json.loads(ref.read_text())
