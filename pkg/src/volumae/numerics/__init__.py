from volumae.numerics.tensor import (  # noqa F401
    ComputeGraph,
    Tensor,
    as_tensor,
    backward,
    no_grad,
)
from volumae.numerics.gradcheck import (  # noqa F401
    check_gradients,
    finite_difference_grad,
    relative_error,
)
