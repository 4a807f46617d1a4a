from pathlib import Path
from typing import Literal, Tuple, Type

from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic_settings.sources import PydanticBaseSettingsSource

from volumae.config.parser import SettingsFileSource

BASE_SETTINGS_FOLDER = Path()

LogLevel = Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]


class Settings(BaseSettings):
    """Process-wide settings, read from VOLUMAE_* variables, .env or volumae.config.yaml"""

    data_dir: Path = Path(".data")
    log_level: LogLevel = "INFO"
    json_logs: bool = True

    model_config = SettingsConfigDict(
        env_prefix="VOLUMAE_",
        env_file=BASE_SETTINGS_FOLDER / ".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return (
            init_settings,
            env_settings,
            dotenv_settings,
            file_secret_settings,
            SettingsFileSource(settings_cls),
        )
