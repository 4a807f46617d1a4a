import re
from typing import Any, Callable


def prettify_name(name: str) -> str:
    """Prettify a string replacing underscores and dashes with spaces"""
    return re.sub(r"[_-]+", " ", name).strip()


def with_default_name(data: Any, style: Callable[[str], str]) -> Any:
    """Fill a missing or empty `name` in raw model input from its `id`"""
    if isinstance(data, dict) and not data.get("name") and "id" in data:
        data = {**data, "name": style(prettify_name(data["id"]))}
    return data
