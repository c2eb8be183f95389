"""Tabular binary-classification data: loading, encoding, scaling, subsetting."""
from __future__ import annotations

import configparser
import csv
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    feature_names: tuple[str, ...]
    labels: np.ndarray

    def __post_init__(self):
        X = np.array(self.features, dtype=float, copy=True)
        y = np.array(self.labels, dtype=int, copy=True)
        names = tuple(self.feature_names)
        if X.ndim != 2:
            raise DatasetError("features must be a 2-d matrix")
        if X.shape[0] < 2 or X.shape[1] < 1:
            raise DatasetError(f"need n >= 2 and d >= 1, got shape {X.shape}")
        if len(names) != X.shape[1]:
            raise DatasetError("feature_names length does not match column count")
        if len(set(names)) != len(names):
            raise DatasetError("feature names must be unique")
        if y.shape != (X.shape[0],):
            raise DatasetError("labels must be a vector with one entry per row")
        if not np.isin(y, (0, 1)).all():
            raise DatasetError("labels must be 0 or 1")
        if not np.isfinite(X).all():
            raise DatasetError("features contain missing or non-finite values")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.features[:, self.feature_names.index(name)]

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(features, self.feature_names, self.labels)


@dataclass(frozen=True)
class ScalerParams:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def inverse_transform(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.std + self.mean


@dataclass(frozen=True)
class ColumnKind:
    kind: str  # "numeric" | "categorical" | "label"
    mapping: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Schema:
    columns: dict  # column name -> ColumnKind, in file order
    positive: str = "1"

    def __post_init__(self):
        n_labels = sum(c.kind == "label" for c in self.columns.values())
        if n_labels != 1:
            raise DatasetError(f"schema needs exactly one label column, found {n_labels}")

    @property
    def label_column(self) -> str:
        return next(k for k, c in self.columns.items() if c.kind == "label")


_CATEGORICAL = re.compile(r"^categorical\s*\((.*)\)$")


def parse_schema(text: str) -> Schema:
    """Parse the INI-style schema format.

    ``[columns]`` lists ``name = numeric | label | categorical(a=0, b=1)``;
    the optional ``[label]`` section sets ``positive = <raw label value>``.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str  # keep column-name case
    parser.read_string(text)
    if not parser.has_section("columns"):
        raise DatasetError("schema is missing a [columns] section")
    columns = {}
    for name, spec in parser.items("columns"):
        spec = spec.strip()
        m = _CATEGORICAL.match(spec)
        if m:
            mapping = {}
            for item in m.group(1).split(","):
                key, _, code = item.partition("=")
                if not _:
                    raise DatasetError(f"bad categorical entry {item!r} for column {name}")
                mapping[key.strip()] = float(code)
            columns[name] = ColumnKind("categorical", mapping)
        elif spec in ("numeric", "label"):
            columns[name] = ColumnKind(spec)
        else:
            raise DatasetError(f"unknown column kind {spec!r} for column {name}")
    positive = parser.get("label", "positive", fallback="1").strip()
    return Schema(columns, positive)


def load_schema(path) -> Schema:
    return parse_schema(Path(path).read_text(encoding="utf-8"))


def load_csv(path, schema: Schema) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"missing data file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path} is empty") from None
        if header != list(schema.columns):
            raise DatasetError(f"header {header} does not match schema columns {list(schema.columns)}")
        feature_cols = [c for c in header if schema.columns[c].kind != "label"]
        label_idx = header.index(schema.label_column)
        rows, raw_labels = [], []
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise DatasetError(f"line {lineno}: expected {len(header)} cells, got {len(record)}")
            row = []
            for col, cell in zip(header, record):
                cell = cell.strip()
                if cell == "" or cell.upper() == "NA":
                    raise DatasetError(f"line {lineno}: missing cell in column {col}")
                kind = schema.columns[col]
                if kind.kind == "label":
                    continue
                if kind.kind == "categorical":
                    if cell not in kind.mapping:
                        raise DatasetError(f"line {lineno}: unknown categorical value {cell!r} in column {col}")
                    row.append(kind.mapping[cell])
                else:
                    try:
                        row.append(float(cell))
                    except ValueError:
                        raise DatasetError(f"line {lineno}: non-numeric value {cell!r} in column {col}") from None
            rows.append(row)
            raw_labels.append(record[label_idx].strip())
    negatives = {v for v in raw_labels if v != schema.positive}
    if len(negatives) > 1:
        raise DatasetError(f"label column has more than two classes: {sorted(negatives | {schema.positive})}")
    labels = [1 if v == schema.positive else 0 for v in raw_labels]
    return Dataset(np.array(rows, dtype=float).reshape(len(rows), len(feature_cols)), tuple(feature_cols), np.array(labels))


def load_saheart() -> Dataset:
    """The bundled South African heart disease data (462 x 9, label chd)."""
    data = resources.files("xkep") / "data"
    schema = parse_schema((data / "saheart.schema").read_text(encoding="utf-8"))
    with resources.as_file(data / "saheart.csv") as p:
        return load_csv(p, schema)


def saheart_paths() -> tuple[Path, Path]:
    data = resources.files("xkep") / "data"
    return Path(str(data / "saheart.csv")), Path(str(data / "saheart.schema"))


def standardize(ds: Dataset) -> tuple[Dataset, ScalerParams]:
    mean = ds.features.mean(axis=0)
    std = ds.features.std(axis=0)  # population std
    for j, s in enumerate(std):
        if not s > 0:
            raise DatasetError(f"constant column cannot be standardized: {ds.feature_names[j]}")
    params = ScalerParams(mean, std)
    return ds.with_features(params.transform(ds.features)), params


def drop_features(ds: Dataset, names) -> Dataset:
    names = list(names)
    unknown = [n for n in names if n not in ds.feature_names]
    if unknown:
        raise DatasetError(f"unknown feature(s): {unknown}")
    keep = [j for j, n in enumerate(ds.feature_names) if n not in names]
    if not keep:
        raise DatasetError("cannot drop every feature")
    return Dataset(ds.features[:, keep], tuple(ds.feature_names[j] for j in keep), ds.labels)


def select_columns(ds: Dataset, names) -> Dataset:
    """Keep ``names`` in the dataset's own column order."""
    names = set(names)
    return drop_features(ds, [n for n in ds.feature_names if n not in names])
