from volumae.model.layers import Module  # noqa F401
from volumae.model.network import (  # noqa F401
    ForwardResult,
    LossBreakdown,
    StepSeeds,
    VolumaeModel,
    jitter_parameters,
)
