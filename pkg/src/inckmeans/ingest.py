"""ARFF and CSV readers/writers producing :class:`Dataset` objects.

Supported ARFF subset: ``@relation``, ``@attribute`` with numeric / real /
integer / string / date / nominal types, and a dense ``@data`` section.
Sparse rows and relational attributes are rejected. ``%`` comment lines and
blank lines are skipped. Values may be quoted with ``'`` or ``"``.

CSV follows RFC 4180 (comma separator, ``"`` quoting). Without a header the
columns are named ``col0 .. col{d-1}``.

Numbers are parsed with a strict, locale-independent grammar: optional sign,
digits with a ``.`` decimal point, optional exponent. ``?`` (and an empty
CSV cell) marks a missing value.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

_NUMBER = re.compile(r"[+-]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?")
_NUMERIC_TYPES = {"numeric", "real", "integer"}
MISSING = "?"


class DataFormatError(ValueError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass(eq=False)
class Dataset:
    ids: list
    X: np.ndarray
    attribute_names: list
    labels: list
    source: Optional[str] = None
    label_name: Optional[str] = None
    relation: Optional[str] = None
    skipped: int = 0

    def __len__(self):
        return len(self.ids)

    @property
    def dimension(self) -> int:
        return len(self.attribute_names)

    @property
    def records(self) -> list:
        return list(zip(self.ids, self.X))

    def lookup(self) -> dict:
        return dict(zip(self.ids, self.X))

    def label_map(self) -> dict:
        return {rid: lab for rid, lab in zip(self.ids, self.labels) if lab is not None}

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.attribute_names == other.attribute_names
            and self.labels == other.labels
            and self.label_name == other.label_name
            and self.X.shape == other.X.shape
            and np.array_equal(self.X, other.X)
        )


def parse_number(token: str) -> float:
    token = token.strip()
    if not _NUMBER.fullmatch(token):
        raise ValueError(f"not a number: {token!r}")
    return float(token)


def _is_number(token: str) -> bool:
    return bool(_NUMBER.fullmatch(token.strip()))


def _split_arff_row(line: str) -> list:
    """Split one ARFF data line on commas, honouring ' and " quotes."""
    out, buf, quote, i = [], [], None, 0
    while i < len(line):
        ch = line[i]
        if quote:
            if ch == "\\" and i + 1 < len(line):
                buf.append(line[i + 1])
                i += 2
                continue
            if ch == quote:
                quote = None
            else:
                buf.append(ch)
        elif ch in "'\"" and not "".join(buf).strip():
            buf = []
            quote = ch
        elif ch == ",":
            out.append("".join(buf).strip())
            buf = []
        else:
            buf.append(ch)
        i += 1
    if quote:
        raise ValueError("unterminated quote")
    out.append("".join(buf).strip())
    return out


def _split_attribute(rest: str):
    rest = rest.strip()
    if rest[:1] in ("'", '"'):
        end = rest.find(rest[0], 1)
        if end < 0:
            raise ValueError("unterminated attribute name")
        return rest[1:end], rest[end + 1:].strip()
    parts = rest.split(None, 1)
    if len(parts) < 2:
        raise ValueError("attribute declaration needs a name and a type")
    return parts[0], parts[1].strip()


def _attribute_kind(decl: str) -> str:
    low = decl.lower()
    if low.startswith("{"):
        return "nominal"
    word = low.split(None, 1)[0]
    if word in _NUMERIC_TYPES:
        return "numeric"
    if word in ("string", "date"):
        return word
    if word == "relational":
        raise ValueError("relational attributes are not supported")
    raise ValueError(f"unsupported attribute type {decl!r}")


def _select(names, kinds, feature_columns, id_column, path):
    """Pick feature, label and id column indices."""
    index = {n: i for i, n in enumerate(names)}
    id_idx = None
    if id_column is not None:
        if id_column not in index:
            raise DataFormatError(f"unknown id column {id_column!r}", path)
        id_idx = index[id_column]
    if feature_columns is None:
        feats = [i for i, k in enumerate(kinds) if k == "numeric" and i != id_idx]
    else:
        feats = []
        for name in feature_columns:
            if name not in index:
                raise DataFormatError(f"unknown column {name!r}", path)
            if kinds[index[name]] != "numeric":
                raise DataFormatError(f"column {name!r} is not numeric", path)
            feats.append(index[name])
    if not feats:
        raise DataFormatError("no numeric feature columns", path)
    label_idx = next((i for i, k in enumerate(kinds)
                      if k != "numeric" and i != id_idx and i not in feats), None)
    return feats, label_idx, id_idx


def _build(rows, names, feats, label_idx, id_idx, path, skip_missing, **extra) -> Dataset:
    """``rows`` yields ``(line_number, cells)``."""
    ids, vecs, labels = [], [], []
    seen = set()
    skipped = 0
    n = 0
    for lineno, cells in rows:
        if len(cells) != len(names):
            raise DataFormatError(
                f"expected {len(names)} values, found {len(cells)}", path, lineno)
        vec = []
        missing = False
        for i in feats:
            cell = cells[i].strip()
            if cell in (MISSING, ""):
                missing = True
                break
            try:
                vec.append(parse_number(cell))
            except ValueError:
                raise DataFormatError(
                    f"non-numeric value {cell!r} in numeric column {names[i]!r}",
                    path, lineno) from None
        if missing:
            if not skip_missing:
                raise DataFormatError("missing value ('?') in a feature column", path, lineno)
            skipped += 1
            continue
        rid = cells[id_idx].strip() if id_idx is not None else n
        if rid in seen:
            raise DataFormatError(f"duplicate record id {rid!r}", path, lineno)
        seen.add(rid)
        ids.append(rid)
        vecs.append(vec)
        labels.append(cells[label_idx].strip() if label_idx is not None else None)
        n += 1
    X = np.array(vecs, dtype=np.float64).reshape(len(vecs), len(feats))
    return Dataset(
        ids=ids,
        X=X,
        attribute_names=[names[i] for i in feats],
        labels=labels,
        source=str(path) if path is not None else None,
        label_name=names[label_idx] if label_idx is not None else None,
        skipped=skipped,
        **extra,
    )


def read_arff(text: str, feature_columns: Optional[Sequence[str]] = None,
              id_column: Optional[str] = None, skip_missing: bool = False,
              path=None) -> Dataset:
    names, kinds = [], []
    relation = None
    data_start = None
    # str.splitlines would also break on \f, \x1c.. and U+2028 inside quoted values
    lines = [ln[:-1] if ln.endswith("\r") else ln for ln in text.split("\n")]
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        low = line.lower()
        if low.startswith("@relation"):
            relation = line[len("@relation"):].strip().strip("'\"")
        elif low.startswith("@attribute"):
            try:
                name, decl = _split_attribute(line[len("@attribute"):])
                kind = _attribute_kind(decl)
            except ValueError as exc:
                raise DataFormatError(str(exc), path, lineno) from None
            if name in names:
                raise DataFormatError(f"duplicate attribute name {name!r}", path, lineno)
            names.append(name)
            kinds.append(kind)
        elif low.startswith("@data"):
            data_start = lineno
            break
        elif low.startswith("@"):
            raise DataFormatError(f"unknown declaration {line.split()[0]!r}", path, lineno)
        else:
            raise DataFormatError("data line before @data", path, lineno)
    if data_start is None:
        raise DataFormatError("missing @data section", path)
    if not names:
        raise DataFormatError("no @attribute declarations", path)

    feats, label_idx, id_idx = _select(names, kinds, feature_columns, id_column, path)

    def rows():
        for lineno in range(data_start + 1, len(lines) + 1):
            line = lines[lineno - 1].strip()
            if not line or line.startswith("%"):
                continue
            if line.startswith("{"):
                raise DataFormatError("sparse ARFF rows are not supported", path, lineno)
            try:
                yield lineno, _split_arff_row(line)
            except ValueError as exc:
                raise DataFormatError(str(exc), path, lineno) from None

    return _build(rows(), names, feats, label_idx, id_idx, path, skip_missing,
                  relation=relation)


def parse_arff(path, feature_columns: Optional[Sequence[str]] = None,
               id_column: Optional[str] = None, skip_missing: bool = False) -> Dataset:
    path = Path(path)
    return read_arff(path.read_text(encoding="utf-8"), feature_columns, id_column,
                     skip_missing, path)


def read_csv(text: str, has_header: bool = True,
             feature_columns: Optional[Sequence[str]] = None,
             id_column: Optional[str] = None, skip_missing: bool = False,
             path=None) -> Dataset:
    reader = csv.reader(io.StringIO(text, newline=""))
    rows = []
    for cells in reader:
        if not cells or (len(cells) == 1 and not cells[0].strip()):
            continue
        rows.append((reader.line_num, cells))
    if not rows:
        raise DataFormatError("empty file", path)
    if has_header:
        (_, header), body = rows[0], rows[1:]
        names = [h.strip() for h in header]
        dup = next((n for n in names if names.count(n) > 1), None)
        if dup is not None:
            raise DataFormatError(f"duplicate column name {dup!r}", path, rows[0][0])
    else:
        body = rows
        names = [f"col{i}" for i in range(len(rows[0][1]))]

    # a column is numeric when its first non-missing cell parses as a number
    kinds = []
    for i in range(len(names)):
        first = next((c[i].strip() for _, c in body
                      if i < len(c) and c[i].strip() not in (MISSING, "")), None)
        kinds.append("numeric" if first is None or _is_number(first) else "string")
    feats, label_idx, id_idx = _select(names, kinds, feature_columns, id_column, path)
    return _build(iter(body), names, feats, label_idx, id_idx, path, skip_missing)


def parse_csv(path, has_header: bool = True, feature_columns: Optional[Sequence[str]] = None,
              id_column: Optional[str] = None, skip_missing: bool = False) -> Dataset:
    path = Path(path)
    return read_csv(path.read_text(encoding="utf-8"), has_header, feature_columns,
                    id_column, skip_missing, path)


def load_dataset(path, **kwargs) -> Dataset:
    """Dispatch on extension: ``.arff`` or anything else as CSV."""
    path = Path(path)
    if path.suffix.lower() == ".arff":
        kwargs.pop("has_header", None)
        return parse_arff(path, **kwargs)
    return parse_csv(path, **kwargs)


def _quote_arff(value: str) -> str:
    if re.fullmatch(r"[^\s,'\"%{}?]+", value):
        return value
    return "'" + value.replace("\\", "\\\\").replace("'", "\\'") + "'"


def format_arff(ds: Dataset, relation: Optional[str] = None) -> str:
    out = [f"@relation {_quote_arff(relation or ds.relation or 'dataset')}", ""]
    if ds.label_name is not None:
        out.append(f"@attribute {_quote_arff(ds.label_name)} string")
    for name in ds.attribute_names:
        out.append(f"@attribute {_quote_arff(name)} numeric")
    out += ["", "@data"]
    for lab, row in zip(ds.labels, ds.X):
        cells = [repr(float(v)) for v in row]
        if ds.label_name is not None:
            cells.insert(0, _quote_arff(lab if lab is not None else ""))
        out.append(",".join(cells))
    return "\n".join(out) + "\n"


def write_arff(ds: Dataset, path, relation: Optional[str] = None) -> None:
    Path(path).write_text(format_arff(ds, relation), encoding="utf-8")


def format_csv(ds: Dataset) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    header = list(ds.attribute_names)
    if ds.label_name is not None:
        header.insert(0, ds.label_name)
    w.writerow(header)
    for lab, row in zip(ds.labels, ds.X):
        cells = [repr(float(v)) for v in row]
        if ds.label_name is not None:
            cells.insert(0, lab if lab is not None else "")
        w.writerow(cells)
    return buf.getvalue()


def write_csv(ds: Dataset, path) -> None:
    Path(path).write_text(format_csv(ds), encoding="utf-8", newline="")


def from_vectors(vectors: Iterable, attribute_names: Optional[Sequence[str]] = None,
                 ids: Optional[Sequence] = None, labels: Optional[Sequence] = None) -> Dataset:
    X = np.array([np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in vectors])
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    d = X.shape[1] if X.size else len(attribute_names or [])
    X = X.reshape(len(X), d)
    names = list(attribute_names) if attribute_names else [f"col{i}" for i in range(d)]
    ids = list(ids) if ids is not None else list(range(len(X)))
    return Dataset(ids, X, names, list(labels) if labels is not None else [None] * len(X),
                   label_name="label" if labels is not None else None)
