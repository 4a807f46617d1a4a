import json
import logging
from time import gmtime
from typing import Dict, Optional


# JSON key -> LogRecord attribute
RECORD_FIELDS: Dict[str, str] = {
    "level": "levelname",
    "message": "message",
    "loggerName": "name",
    "timestamp": "asctime",
}

TEXT_FORMAT = "%(asctime)s %(levelname)-8s %(name)s: %(message)s"


class JsonFormatter(logging.Formatter):
    """
    One JSON object per record, tagged with the run and the stage (pipeline
    task, check or ablation arm) it was emitted from.

    Timestamps are UTC, ISO 8601 with milliseconds. Exception and stack
    texts go under `exc_info` and `stack_info`.
    """

    default_time_format = "%Y-%m-%dT%H:%M:%S"
    default_msec_format = "%s.%03dZ"
    converter = gmtime

    def __init__(
        self,
        run: str,
        stage: Optional[str] = None,
        fields: Optional[Dict[str, str]] = None,
    ):
        super().__init__()
        self.run = run
        self.stage = stage
        self.fields = RECORD_FIELDS if fields is None else fields

    def usesTime(self) -> bool:
        return "asctime" in self.fields.values()

    def to_dict(self, record: logging.LogRecord) -> dict:
        record.message = record.getMessage()
        if self.usesTime():
            record.asctime = self.formatTime(record)

        entry = {key: getattr(record, attribute) for key, attribute in self.fields.items()}
        entry["run"] = self.run
        entry["stage"] = self.stage

        if record.exc_info and not record.exc_text:
            record.exc_text = self.formatException(record.exc_info)
        if record.exc_text:
            entry["exc_info"] = record.exc_text
        if record.stack_info:
            entry["stack_info"] = self.formatStack(record.stack_info)

        return entry

    def format(self, record: logging.LogRecord) -> str:
        return json.dumps(self.to_dict(record), default=str)
