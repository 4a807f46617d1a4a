from volumae.config.model import Settings
from volumae.config.parser import load_run_config, validate_run_config  # noqa F401
from volumae.config.run_config import (  # noqa F401
    DecoderConfig,
    EncoderConfig,
    InteractionSpace,
    LossConfig,
    MMIMConfig,
    OptimizerConfig,
    PointDecoration,
    PositionalEmbedding,
    RunConfig,
    SCAConfig,
    SceneConfig,
    TokenizerConfig,
)


settings = Settings()
