import urllib.request as request
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional

import numpy as np
import pandas as pd

from CFSFL import logger
from CFSFL.components.data_validation import DataValidation
from CFSFL.entity.artifact_entity import RawInteraction
from CFSFL.entity.config_entity import DataIngestionConfig
from CFSFL.exception import DataError, FormatError
from CFSFL.utils.common import get_size

SUPPORTED_FORMATS = ("csv_movielens",)
_MAX_FIELDS = 5


@dataclass
class InteractionLog:
    """Parsed interaction rows plus the count of rows that had to be skipped."""

    records: List[RawInteraction] = field(default_factory=list)
    malformed_count: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[RawInteraction]:
        return iter(self.records)

    def __getitem__(self, index):
        return self.records[index]


def _parse_timestamp(value) -> Optional[int]:
    if value is None or (isinstance(value, float) and np.isnan(value)) or str(value).strip() == "":
        return None
    number = float(value)
    if not np.isfinite(number) or not number.is_integer():
        raise ValueError(value)
    return int(number)


def load_interactions(path: Path, format: str = "csv_movielens",
                      validation: Optional[DataValidation] = None) -> InteractionLog:
    """Reads ``userId,itemId,rating[,timestamp]`` rows; the header is optional.

    Malformed rows are skipped and counted; more than the allowed fraction of
    them is a ``FormatError``.
    """
    if format not in SUPPORTED_FORMATS:
        raise FormatError(f"unsupported interaction format {format!r}")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"interaction file not found: {path}")
    validation = validation or DataValidation()

    bad_lines = []
    try:
        frame = pd.read_csv(
            path, header=None, names=list(range(_MAX_FIELDS)), dtype=str, engine="python",
            skip_blank_lines=True, keep_default_na=False, encoding="utf-8",
            on_bad_lines=lambda line: bad_lines.append(line))
    except pd.errors.EmptyDataError:
        logger.warning(f"{path}: file is empty")
        return InteractionLog()
    frame = frame.fillna("")

    order = [0, 1, 2, 3]
    if len(frame) and validation.looks_like_header([str(c) for c in frame.iloc[0].tolist()]):
        header = [validation.canonical(c) for c in frame.iloc[0].tolist() if c]
        if not validation.validate_all_columns(header):
            raise FormatError(f"{path}: unexpected header {header}")
        position = {name: i for i, name in enumerate(header)}
        order = [position.get(name) for name in ("userId", "itemId", "rating", "timestamp")]
        frame = frame.iloc[1:]

    records: List[RawInteraction] = []
    malformed = len(bad_lines)
    for row in frame.itertuples(index=False):
        values = [str(v).strip() for v in row]
        try:
            used = {i for i in order if i is not None}
            if any(values[i] for i in range(_MAX_FIELDS) if i not in used):
                raise ValueError("extra fields")
            user_id, item_id = values[order[0]], values[order[1]]
            rating = float(values[order[2]])
            if not user_id or not item_id or not np.isfinite(rating):
                raise ValueError("missing or non-finite field")
            timestamp = _parse_timestamp(values[order[3]]) if order[3] is not None else None
        except (ValueError, IndexError):
            malformed += 1
            continue
        records.append(RawInteraction(user_id=user_id, item_id=item_id, rating=rating, timestamp=timestamp))

    validation.check_malformed(malformed, len(records) + malformed, path)
    if not records:
        logger.warning(f"{path}: no interaction rows found")
    logger.info(f"loaded {len(records)} interactions from {path} ({malformed} malformed)")
    return InteractionLog(records=records, malformed_count=malformed)


class DataIngestion:
    """Fetches and unpacks the configured MovieLens archive for ``prep --download``."""

    def __init__(self, config: DataIngestionConfig):
        self.config = config

    def download_file(self) -> Path:
        archive = Path(self.config.local_data_file)
        if archive.exists():
            logger.info(f"archive already present ({get_size(archive)}), skipping download")
            return archive
        archive.parent.mkdir(parents=True, exist_ok=True)
        partial = archive.with_name(archive.name + ".part")
        _, headers = request.urlretrieve(url=self.config.source_URL, filename=partial)
        partial.replace(archive)
        logger.info(f"downloaded {self.config.source_URL} to {archive} ({get_size(archive)})")
        logger.debug(f"response headers:\n{headers}")
        return archive

    def extract_zip_file(self) -> Path:
        """Unpacks the archive once; returns the ratings CSV inside it."""
        ratings = Path(self.config.ratings_file)
        if ratings.exists():
            logger.info(f"{ratings} already extracted")
            return ratings
        unzip_path = Path(self.config.unzip_dir)
        unzip_path.mkdir(parents=True, exist_ok=True)
        try:
            with zipfile.ZipFile(self.config.local_data_file, "r") as zip_ref:
                zip_ref.extractall(unzip_path)
        except zipfile.BadZipFile as e:
            raise DataError(f"{self.config.local_data_file} is not a zip archive: {e}")
        if not ratings.exists():
            raise DataError(f"{self.config.local_data_file} did not contain {ratings.name} at {ratings}")
        logger.info(f"extracted {self.config.local_data_file} into {unzip_path}")
        return ratings
