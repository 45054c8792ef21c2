"""CSV input/output of functional datasets and loading of study configs.

A dataset on disk is three comma-separated files without an index column:

* ``X.csv``: N rows of J predictor values, one row per curve;
* ``t.csv``: the J observation times, one per row;
* ``y.csv``: the N responses, one per row (optional for prediction).

A header row is optional and must be announced with ``header=True``.
"""

import json
import logging
import re
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd

from .exceptions import ConfigError, DataError
from .models import FunctionalDataset
from .sim import StudyConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
FLOAT_FORMAT = "%.17g"
_PARSER_LINE = re.compile(r"line (\d+)")


@dataclass(frozen=True)
class DataBundle:
    """Paths of a dataset on disk and the dataset parsed from them.

    Args:
        x_path: Predictor matrix file
        t_path: Grid file
        y_path: Response file, if any
        dataset: Parsed dataset
    """

    x_path: Path
    t_path: Path
    y_path: Optional[Path]
    dataset: FunctionalDataset


def read_matrix(path: PathLike, header: bool = False) -> np.ndarray:
    """Read a dense numeric CSV file.

    Args:
        path: CSV file
        header: Whether the first row is a header

    Returns:
        2-D float array

    Raises:
        DataError: If the file is missing, ragged, empty or non-numeric; the
            message names the offending row
    """
    location = str(path)
    offset = 2 if header else 1
    try:
        frame = pd.read_csv(
            path, header=0 if header else None, skip_blank_lines=True, dtype=str
        )
    except FileNotFoundError as e:
        raise DataError("File not found", path=location) from e
    except pd.errors.EmptyDataError as e:
        raise DataError("File is empty", path=location) from e
    except pd.errors.ParserError as e:
        match = _PARSER_LINE.search(str(e))
        row = int(match.group(1)) if match else None
        raise DataError(f"Ragged or malformed row: {e}", path=location, row=row) from e

    if frame.empty:
        raise DataError("File has no data rows", path=location)
    values = frame.apply(
        lambda column: pd.to_numeric(column.str.strip(), errors="coerce")
    )
    bad = values.isna().any(axis=1).to_numpy()
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise DataError(
            "Missing, non-numeric or short row", path=location, row=first + offset
        )
    return values.to_numpy(dtype=float)


def _read_vector(path: PathLike, header: bool, name: str) -> np.ndarray:
    matrix = read_matrix(path, header)
    if matrix.shape[1] != 1:
        raise DataError(
            f"{name} must have a single column, found {matrix.shape[1]}", path=str(path)
        )
    return matrix[:, 0]


def load_bundle(
    x_path: PathLike,
    t_path: PathLike,
    y_path: Optional[PathLike] = None,
    header: bool = False,
) -> DataBundle:
    """Load a dataset from its CSV files.

    Args:
        x_path: N x J predictor matrix
        t_path: J x 1 grid
        y_path: N x 1 responses
        header: Whether every file starts with a header row

    Returns:
        Data bundle

    Raises:
        DataError: If a file cannot be parsed or the dimensions disagree
    """
    predictors = read_matrix(x_path, header)
    grid = _read_vector(t_path, header, "Grid")
    if predictors.shape[1] != grid.size:
        raise DataError(
            f"X.csv has {predictors.shape[1]} columns but t.csv has {grid.size} "
            "times",
            path=str(x_path),
        )
    if np.any(np.diff(grid) <= 0):
        row = int(np.flatnonzero(np.diff(grid) <= 0)[0]) + (3 if header else 2)
        raise DataError("Grid must be strictly increasing", path=str(t_path), row=row)
    response = None
    if y_path is not None:
        response = _read_vector(y_path, header, "Response")
        if response.size != predictors.shape[0]:
            raise DataError(
                f"y.csv has {response.size} rows but X.csv has "
                f"{predictors.shape[0]} curves",
                path=str(y_path),
            )
    dataset = FunctionalDataset(predictors=predictors, grid=grid, response=response)
    logger.info(
        "Loaded %d curves on %d times from %s",
        dataset.n_curves,
        dataset.n_times,
        x_path,
    )
    return DataBundle(
        x_path=Path(x_path),
        t_path=Path(t_path),
        y_path=None if y_path is None else Path(y_path),
        dataset=dataset,
    )


def write_bundle(directory: PathLike, dataset: FunctionalDataset) -> Dict[str, Path]:
    """Write a dataset as X.csv, t.csv and (if present) y.csv.

    Values are written with 17 significant digits so that reading them back
    reproduces the arrays exactly.

    Returns:
        Mapping of file role to written path
    """
    target = Path(directory)
    target.mkdir(parents=True, exist_ok=True)
    paths = {"X": target / "X.csv", "t": target / "t.csv"}
    pd.DataFrame(dataset.predictors).to_csv(
        paths["X"], header=False, index=False, float_format=FLOAT_FORMAT
    )
    pd.DataFrame(dataset.grid).to_csv(
        paths["t"], header=False, index=False, float_format=FLOAT_FORMAT
    )
    if dataset.response is not None:
        paths["y"] = target / "y.csv"
        pd.DataFrame(dataset.response).to_csv(
            paths["y"], header=False, index=False, float_format=FLOAT_FORMAT
        )
    return paths


def load_config(path: PathLike) -> Dict[str, Any]:
    """Parse a TOML or JSON configuration file.

    Raises:
        ConfigError: If the file is missing, has an unknown suffix or does
            not parse
    """
    source = Path(path)
    if not source.is_file():
        raise ConfigError(f"Configuration file not found: {source}")
    suffix = source.suffix.lower()
    try:
        if suffix == ".toml":
            with source.open("rb") as handle:
                return tomllib.load(handle)
        if suffix == ".json":
            payload = json.loads(source.read_text())
            if not isinstance(payload, dict):
                raise ConfigError(f"{source}: top level must be an object")
            return payload
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot parse {source}: {e}") from e
    raise ConfigError(
        f"Unsupported configuration format '{suffix}'; use .toml or .json"
    )


def shipped_config(name: str) -> Path:
    """Path of a study configuration shipped with the package.

    Args:
        name: File name with or without the ``.toml`` suffix

    Raises:
        ConfigError: If no such configuration is shipped
    """
    filename = name if name.endswith(".toml") else f"{name}.toml"
    candidate = resources.files("fgamtest").joinpath("configs").joinpath(filename)
    if not candidate.is_file():
        raise ConfigError(f"No shipped configuration named '{name}'")
    return Path(str(candidate))


def load_study_config(path_or_name: PathLike) -> StudyConfig:
    """Load a study config from a file, or by the name of a shipped config."""
    path = Path(path_or_name)
    if not path.exists() and path.suffix in ("", ".toml") and path.parent == Path("."):
        path = shipped_config(str(path_or_name))
    return StudyConfig.from_mapping(load_config(path))
