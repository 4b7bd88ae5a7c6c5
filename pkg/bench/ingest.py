"""
CSV ingestion with the regression preprocessing pipeline.

    1. rows holding a missing marker ('', '?', 'NA', ...) are dropped
    2. binary features become 0/1, other categoricals are one-hot expanded
    3. constant columns are dropped
    4. continuous inputs and the target are standardized (population sd)
    5. a seeded permutation splits train and test
"""
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ppd.data import Dataset
from ppd.errors import IngestionError

from .seeding import derive_rng

logger = logging.getLogger(__name__)

MISSING_MARKERS = ('', '?', 'NA', 'N/A', 'NaN', 'nan', 'null')


@dataclass
class IngestConfig:
    """Configuration for CSV ingestion and the train/test split."""
    seed: int = 0
    test_fraction: float = 0.1
    n_train: Optional[int] = None
    n_test: Optional[int] = None
    missing_markers: Sequence[str] = MISSING_MARKERS

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise IngestionError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")


@dataclass
class Standardizer:
    """Per-column means and population standard deviations."""
    means: Dict[str, float] = field(default_factory=dict)
    sds: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def fit(cls, frame: pd.DataFrame, columns: Sequence[str]) -> "Standardizer":
        means = {c: float(frame[c].mean()) for c in columns}
        sds = {c: float(frame[c].std(ddof=0)) for c in columns}
        return cls(means, sds)

    def transform(self, frame: pd.DataFrame) -> pd.DataFrame:
        out = frame.copy()
        for c in self.means:
            out[c] = (out[c] - self.means[c]) / self.sds[c]
        return out

    def inverse_transform(self, frame: pd.DataFrame) -> pd.DataFrame:
        out = frame.copy()
        for c in self.means:
            out[c] = out[c] * self.sds[c] + self.means[c]
        return out

    def inverse_column(self, column: str, values) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.sds[column] + self.means[column]

    def to_dict(self) -> dict:
        return {'means': self.means, 'sds': self.sds, 'convention': 'population (ddof=0)'}


@dataclass
class IngestedDataset:
    train: Dataset
    test: Dataset
    feature_names: List[str]
    target: str
    standardizer: Standardizer
    dropped_rows: int = 0
    dropped_columns: List[str] = field(default_factory=list)


def _read(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise IngestionError(f"CSV file not found: {path}", operation="load_csv_dataset", path=path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8', skipinitialspace=True)
    except (pd.errors.ParserError, UnicodeDecodeError, pd.errors.EmptyDataError) as e:
        raise IngestionError(f"Could not parse CSV {path}: {e}", operation="load_csv_dataset", path=path)
    frame.columns = [str(c).strip() for c in frame.columns]
    return frame.astype(object).apply(lambda col: col.str.strip())


def _numeric_column(frame: pd.DataFrame, column: str) -> Optional[pd.Series]:
    """Parsed column, None if categorical; raises on a stray unparseable cell."""
    parsed = pd.to_numeric(frame[column], errors='coerce')
    bad = parsed.isna()
    if not bad.any():
        return parsed.astype(float)
    if bad.all():
        return None
    # index labels are data-row positions in the file
    label = bad.index[bad.to_numpy()][0]
    row = int(label) + 1
    raise IngestionError(
        f"Unparseable value {frame[column].loc[label]!r} in numeric column '{column}' at data row {row}",
        operation="load_csv_dataset", row=row, column=column,
    )


def preprocess_frame(frame: pd.DataFrame, target: str, missing_markers: Sequence[str] = MISSING_MARKERS):
    """Apply the encoding pipeline; returns (encoded frame, continuous columns, dropped columns, dropped rows)."""
    if target not in frame.columns:
        raise IngestionError(f"Target column '{target}' not found; columns are {list(frame.columns)}",
                             operation="load_csv_dataset", column=target)

    missing = frame.isin(list(missing_markers)).any(axis=1)
    dropped_rows = int(missing.sum())
    if dropped_rows:
        logger.warning(f"[ingest] dropping {dropped_rows} row(s) with missing markers")
    frame = frame.loc[~missing]
    if frame.empty:
        raise IngestionError("No complete rows remain after dropping missing values", operation="load_csv_dataset")

    y = _numeric_column(frame, target)
    if y is None:
        raise IngestionError(f"Target column '{target}' is not numeric", operation="load_csv_dataset", column=target)

    encoded = {}
    continuous, dropped = [], []
    for column in frame.columns:
        if column == target:
            continue
        values = _numeric_column(frame, column)
        if values is not None:
            uniques = values.unique()
            if uniques.size <= 1:
                dropped.append(column)
            elif set(uniques.tolist()) <= {0.0, 1.0}:
                encoded[column] = values
            else:
                encoded[column] = values
                continuous.append(column)
            continue

        levels = sorted(frame[column].unique().tolist())
        if len(levels) <= 1:
            dropped.append(column)
        elif len(levels) == 2:
            encoded[column] = (frame[column] == levels[1]).astype(float)
        else:
            for level in levels:
                encoded[f"{column}={level}"] = (frame[column] == level).astype(float)

    for column in dropped:
        logger.warning(f"[ingest] dropping constant column '{column}'")
    if y.nunique() <= 1:
        raise IngestionError(f"Target column '{target}' is constant", operation="load_csv_dataset", column=target)

    out = pd.DataFrame(encoded, index=frame.index)
    out[target] = y
    return out, continuous, dropped, dropped_rows


def load_csv_dataset(path: str, target_column: str, config: Optional[IngestConfig] = None) -> IngestedDataset:
    """
    Load a CSV, encode and standardize it, and split it deterministically.

    Raises:
        IngestionError: missing file or target column, or an unparseable
            cell in a numeric column (with its data row and column).
    """
    config = config or IngestConfig()
    frame, continuous, dropped, dropped_rows = preprocess_frame(_read(path), target_column, config.missing_markers)

    features = [c for c in frame.columns if c != target_column]
    if not features:
        raise IngestionError("No usable input columns remain", operation="load_csv_dataset")

    standardizer = Standardizer.fit(frame, continuous + [target_column])
    frame = standardizer.transform(frame)

    order = derive_rng(config.seed, "csv-split").permutation(len(frame))
    n_test = config.n_test if config.n_test is not None else max(1, int(round(config.test_fraction * len(frame))))
    if n_test >= len(frame):
        raise IngestionError(f"Test size {n_test} leaves no training rows out of {len(frame)}",
                             operation="load_csv_dataset")
    test_idx, train_idx = order[:n_test], order[n_test:]
    if config.n_train is not None:
        train_idx = train_idx[:config.n_train]

    X = frame[features].to_numpy(dtype=float)
    y = frame[target_column].to_numpy(dtype=float)
    logger.info(f"[ingest] {path}: {len(train_idx)} train / {len(test_idx)} test rows, "
                f"{len(features)} features ({len(continuous)} standardized)")
    return IngestedDataset(
        train=Dataset(X[train_idx], y[train_idx]),
        test=Dataset(X[test_idx], y[test_idx]),
        feature_names=features,
        target=target_column,
        standardizer=standardizer,
        dropped_rows=dropped_rows,
        dropped_columns=dropped,
    )
