from volumae.pipeline.pipeline import Pipeline  # noqa F401
from volumae.pipeline.task import Task  # noqa F401
