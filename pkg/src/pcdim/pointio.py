"""Point record I/O: CSV with header and ASCII PLY.

Both formats carry x,y,z plus the optional attribute columns intensity,
num_echo and class. All numbers are parsed as decimal floating point;
attribute columns are narrowed after parsing (intensity -> float32,
num_echo/class -> int32).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

# Optional attribute columns, in canonical order.
OPTIONAL_COLUMNS = ("intensity", "num_echo", "class")

# PLY property aliases seen in the wild for our columns.
_PLY_ALIASES = {
    "x": "x", "y": "y", "z": "z",
    "intensity": "intensity", "scalar_intensity": "intensity",
    "num_echo": "num_echo", "number_of_echo": "num_echo", "num_returns": "num_echo",
    "class": "class", "classification": "class", "label": "class",
}


@dataclass
class PointData:
    """Column-oriented point records.

    xyz is always present; the attribute arrays are None when the source
    had no such column.
    """

    xyz: np.ndarray
    intensity: np.ndarray | None = None
    num_echo: np.ndarray | None = None
    class_label: np.ndarray | None = None
    source: str = field(default="", compare=False)

    def __len__(self) -> int:
        return self.xyz.shape[0]

    @property
    def attributes(self) -> tuple[str, ...]:
        """Names of the optional columns present, in canonical order."""
        out = []
        if self.intensity is not None:
            out.append("intensity")
        if self.num_echo is not None:
            out.append("num_echo")
        if self.class_label is not None:
            out.append("class")
        return tuple(out)

    def take(self, idx: np.ndarray) -> "PointData":
        """Row subset (used when splitting into patches)."""
        return PointData(
            xyz=self.xyz[idx],
            intensity=None if self.intensity is None else self.intensity[idx],
            num_echo=None if self.num_echo is None else self.num_echo[idx],
            class_label=None if self.class_label is None else self.class_label[idx],
            source=self.source,
        )


def _validate(data: PointData) -> PointData:
    if len(data) == 0:
        raise DataError(f"{data.source or 'input'}: no point records")
    if not np.isfinite(data.xyz).all():
        bad = int(np.where(~np.isfinite(data.xyz).all(axis=1))[0][0])
        raise DataError(f"{data.source}: non-finite coordinate at record {bad}")
    if data.num_echo is not None and (data.num_echo < 1).any():
        bad = int(np.where(data.num_echo < 1)[0][0])
        raise DataError(f"{data.source}: num_echo < 1 at record {bad}")
    return data


def _columns_from_table(table: np.ndarray, names: list[str], source: str) -> PointData:
    cols = {name: table[:, i] for i, name in enumerate(names)}
    return _validate(PointData(
        xyz=np.column_stack([cols["x"], cols["y"], cols["z"]]).astype(np.float64),
        intensity=cols["intensity"].astype(np.float32) if "intensity" in cols else None,
        num_echo=cols["num_echo"].astype(np.int32) if "num_echo" in cols else None,
        class_label=cols["class"].astype(np.int32) if "class" in cols else None,
        source=source,
    ))


def _locate_bad_line(lines: list[str], n_fields: int, start_line: int, source: str) -> DataError:
    """Find the first malformed data line for a precise error message."""
    for offset, line in enumerate(lines):
        stripped = line.strip()
        if not stripped:
            continue
        parts = stripped.replace(",", " ").split()
        if len(parts) != n_fields:
            return DataError(
                f"{source}:{start_line + offset}: expected {n_fields} fields, got {len(parts)}")
        try:
            [float(p) for p in parts]
        except ValueError:
            return DataError(f"{source}:{start_line + offset}: non-numeric field in {stripped!r}")
    return DataError(f"{source}: malformed numeric data")


def read_points_csv(path: str) -> PointData:
    """Read a CSV point file with a header line.

    The header must start with x,y,z; intensity, num_echo and class columns
    are optional and recognised by name. Raises DataError naming the line
    for malformed records and for empty streams.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.strip():
            raise DataError(f"{path}: empty file")
        names = [c.strip().lower() for c in header.strip().split(",")]
        if names[:3] != ["x", "y", "z"]:
            raise DataError(f"{path}:1: header must start with x,y,z (got {header.strip()!r})")
        unknown = [n for n in names[3:] if n not in OPTIONAL_COLUMNS]
        if unknown:
            raise DataError(f"{path}:1: unknown column(s) {unknown}")
        body = fh.read()
    if not body.strip():
        raise DataError(f"{path}: no point records")
    try:
        table = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    except ValueError:
        raise _locate_bad_line(body.splitlines(), len(names), 2, path) from None
    if table.shape[1] != len(names):
        raise _locate_bad_line(body.splitlines(), len(names), 2, path)
    return _columns_from_table(table, names, path)


def write_points_csv(path: str, data: PointData) -> None:
    """Write point records as CSV with a canonical header."""
    names = ["x", "y", "z", *data.attributes]
    cols = [data.xyz[:, 0], data.xyz[:, 1], data.xyz[:, 2]]
    for name in data.attributes:
        cols.append({"intensity": data.intensity,
                     "num_echo": data.num_echo,
                     "class": data.class_label}[name])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*cols):
            fh.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating))
                              else str(int(v)) for v in row) + "\n")


def read_points_ply(path: str) -> PointData:
    """Read an ASCII PLY file carrying the same properties as the CSV format."""
    with open(path, "r", encoding="utf-8") as fh:
        magic = fh.readline().strip()
        if magic != "ply":
            raise DataError(f"{path}:1: not a PLY file")
        n_vertex = None
        props: list[str] = []
        in_vertex = False
        line_no = 1
        for line in fh:
            line_no += 1
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "format":
                if tok[1] != "ascii":
                    raise DataError(f"{path}:{line_no}: only ascii PLY is supported")
            elif tok[0] == "element":
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    n_vertex = int(tok[2])
            elif tok[0] == "property" and in_vertex:
                props.append(tok[-1].lower())
            elif tok[0] == "end_header":
                break
        else:
            raise DataError(f"{path}: missing end_header")
        if n_vertex is None:
            raise DataError(f"{path}: no vertex element")
        body_start = line_no + 1
        body = fh.read()

    names = [_PLY_ALIASES.get(p, p) for p in props]
    if names[:3] != ["x", "y", "z"]:
        raise DataError(f"{path}: vertex properties must start with x,y,z (got {props})")
    if n_vertex == 0 or not body.strip():
        raise DataError(f"{path}: no point records")
    try:
        table = np.loadtxt(io.StringIO(body), ndmin=2, max_rows=n_vertex)
    except ValueError:
        raise _locate_bad_line(body.splitlines(), len(names), body_start, path) from None
    if table.shape[0] != n_vertex:
        raise DataError(f"{path}: header declares {n_vertex} vertices, found {table.shape[0]}")
    if table.shape[1] != len(names):
        raise _locate_bad_line(body.splitlines(), len(names), body_start, path)
    keep = [n for n in names if n in ("x", "y", "z") or n in OPTIONAL_COLUMNS]
    idx = [names.index(n) for n in keep]
    return _columns_from_table(table[:, idx], keep, path)


def read_points(path: str) -> PointData:
    """Dispatch on file extension (.ply -> PLY, everything else -> CSV)."""
    if str(path).lower().endswith(".ply"):
        return read_points_ply(path)
    return read_points_csv(path)
