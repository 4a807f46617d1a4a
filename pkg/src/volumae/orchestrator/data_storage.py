import csv
import json
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence

from volumae.config import settings
from volumae.constants import (
    METRICS_FILE,
    METRICS_HEADER,
    RUN_LOGS_FILE,
    SCENE_FILE_PATTERN,
    SUMMARY_FILE,
)
from volumae.exceptions import InvalidDataPath


def _check_is_valid_path(path: Path, base: Path) -> None:
    """
    Check that a data file path doesn't escape its base directory,
    e.g. a file name like `../../.env`.

    Raises:
        InvalidDataPath: In case the path is invalid.
    """
    try:
        path.resolve().relative_to(base.resolve())
    except ValueError:
        raise InvalidDataPath(path)


def get_data_path(base: Path, filename: str) -> Path:
    """Path of `filename` inside `base`, creating the parent directories

    Raises:
        InvalidDataPath: In case the path is invalid.
    """

    data_path = Path(base) / filename

    _check_is_valid_path(data_path, Path(base))

    # equivalent to mkdir -p
    data_path.parent.mkdir(parents=True, exist_ok=True)

    return data_path


def default_run_directory(name: str) -> Path:
    directory = get_data_path(settings.data_dir.absolute(), f"runs/{name}")
    directory.mkdir(exist_ok=True)
    return directory


def get_logs_filename(run_directory: Path) -> Path:
    return get_data_path(run_directory, RUN_LOGS_FILE)


def read_logs_file(run_directory: Path) -> Optional[str]:
    """Read a logs file and returns its content or None
    if the file doesn't exist

    Returns:
        Optional[str]: The logs content in JSONL format
    """

    logs_file = get_logs_filename(run_directory)

    if not logs_file.exists():
        return None

    with logs_file.open(mode="r", encoding="utf-8") as f:
        return f.read().rstrip()


def scene_filename(directory: Path, seed: int) -> Path:
    return get_data_path(directory, SCENE_FILE_PATTERN.format(seed=seed))


def list_scene_files(directory: Path) -> List[Path]:
    """Scene files of a directory ordered by seed"""

    def seed_of(path: Path) -> int:
        try:
            return int(path.stem.split("_", 1)[1])
        except (IndexError, ValueError):
            return -1

    files = [path for path in Path(directory).glob("scene_*.json") if seed_of(path) >= 0]
    return sorted(files, key=seed_of)


def store_json(base: Path, filename: str, data: Any) -> Path:
    path = get_data_path(base, filename)
    with path.open(mode="w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, default=str)
        f.write("\n")
    return path


def read_json(path: Path) -> Any:
    with Path(path).open(mode="r", encoding="utf-8") as f:
        return json.load(f)


def store_summary(run_directory: Path, summary: dict) -> Path:
    return store_json(run_directory, SUMMARY_FILE, summary)


class MetricsWriter:
    """Appends rows to a run's metrics.csv; floats are written with repr precision"""

    def __init__(self, run_directory: Path, resume: bool = False) -> None:
        self.path = get_data_path(run_directory, METRICS_FILE)
        if not resume or not self.path.exists():
            with self.path.open(mode="w", encoding="utf-8", newline="") as f:
                csv.writer(f).writerow(METRICS_HEADER)

    def truncate(self, steps: int) -> None:
        """Drop rows past `steps`, used when resuming from an earlier checkpoint"""

        rows = read_metrics(self.path)[:steps]
        with self.path.open(mode="w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(METRICS_HEADER)
            writer.writerows(
                [_format_row(row[name] for name in METRICS_HEADER) for row in rows]
            )

    def append(self, values: Sequence[float]) -> None:
        with self.path.open(mode="a", encoding="utf-8", newline="") as f:
            csv.writer(f).writerow(_format_row(values))


def _format_row(values: Iterable[Any]) -> List[str]:
    return [str(int(value)) if i == 0 else repr(float(value)) for i, value in enumerate(values)]


def read_metrics(path: Path) -> List[dict]:
    """Rows of a metrics CSV as dicts of floats (step as int)"""

    with Path(path).open(mode="r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != METRICS_HEADER:
            raise ValueError(f"{path} doesn't have the metrics header")
        return [
            {
                name: int(row[name]) if name == "step" else float(row[name])
                for name in METRICS_HEADER
            }
            for row in reader
        ]
