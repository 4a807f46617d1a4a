import logging

from volumae.config import RunConfig, load_run_config  # noqa F401
from volumae.model import StepSeeds, VolumaeModel  # noqa F401
from volumae.scenegen import Scene, generate_scene, load_scene, save_scene  # noqa F401
from volumae.training import pretrain_run  # noqa F401
from volumae._version import __version__  # noqa F401


logging.getLogger(__name__).addHandler(logging.NullHandler())
