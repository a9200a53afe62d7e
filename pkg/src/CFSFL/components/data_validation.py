from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence

from CFSFL import logger
from CFSFL.entity.config_entity import DataValidationConfig
from CFSFL.exception import FormatError

CANONICAL_COLUMNS = ("userId", "itemId", "rating", "timestamp")
DEFAULT_ALIASES = {"movieId": "itemId", "songId": "itemId", "user": "userId", "item": "itemId"}


class DataValidation:
    def __init__(self, config: Optional[DataValidationConfig] = None, aliases: Optional[Dict[str, str]] = None):
        self.config = config
        if aliases is None:
            aliases = dict(DEFAULT_ALIASES)
            if config is not None:
                aliases.update(config.aliases)
        self.aliases = aliases

    @property
    def max_malformed_fraction(self) -> float:
        return 0.01 if self.config is None else self.config.max_malformed_fraction

    @property
    def schema_columns(self) -> Sequence[str]:
        return CANONICAL_COLUMNS if self.config is None else tuple(self.config.all_schema)

    @property
    def required_columns(self) -> Sequence[str]:
        return CANONICAL_COLUMNS[:3] if self.config is None else self.config.required_columns

    def canonical(self, column: str) -> str:
        column = column.strip()
        return self.aliases.get(column, column)

    def looks_like_header(self, fields: Iterable[str]) -> bool:
        names = {self.canonical(f) for f in fields if f}
        return bool(names) and names <= set(self.schema_columns)

    def validate_all_columns(self, columns: Iterable[str]) -> bool:
        """Every header column must be known and every required one present."""
        columns = [self.canonical(c) for c in columns]
        all_schema = set(self.schema_columns)
        validation_status = all(c in all_schema for c in columns) and all(
            c in columns for c in self.required_columns)
        self._write_status(validation_status)
        return validation_status

    def check_malformed(self, malformed: int, total: int, source: Path) -> None:
        if malformed:
            logger.warning(f"{source}: {malformed} malformed row(s) out of {total}")
        if total and malformed / total > self.max_malformed_fraction:
            self._write_status(False)
            raise FormatError(
                f"{source}: {malformed} of {total} rows are malformed "
                f"(more than {self.max_malformed_fraction:.1%})")

    def _write_status(self, validation_status: bool) -> None:
        if self.config is None:
            return
        with open(self.config.STATUS_FILE, 'w') as f:
            f.write(f"Validation status: {validation_status}")
