"""
Parameterised building blocks shared by every branch of the network.

A `Module` owns `Tensor` parameters (leaves with `requires_grad`) and other
modules as attributes; parameters are discovered by walking attributes in
definition order, which fixes their names and their order everywhere
(optimizer state, checkpoints, gradient checks).
"""
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from volumae.numerics import Tensor, ops


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{index}.")

    def parameters(self) -> List[Tensor]:
        params = []
        for name, param in self.named_parameters():
            param.name = name
            params.append(param)
        return params

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: param.data.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """Copy arrays into the parameters, names and shapes must match exactly"""

        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"missing parameters {missing}, unexpected parameters {unexpected}")
        for name, param in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise ValueError(f"`{name}` has shape {value.shape}, expected {param.shape}")
            param.data[...] = value

    def zero_grad(self) -> None:
        for _, param in self.named_parameters():
            param.grad = None


class Linear(Module):
    """y = x W + b, W uniform in +-1/sqrt(fan_in), b zero"""

    def __init__(
        self, in_features: int, out_features: int, rng: np.random.Generator, zero: bool = False
    ) -> None:
        self.in_features = in_features
        self.out_features = out_features
        if zero:
            weight = np.zeros((in_features, out_features))
        else:
            bound = 1.0 / np.sqrt(in_features)
            weight = rng.uniform(-bound, bound, size=(in_features, out_features))
        self.weight = parameter(weight)
        self.bias = parameter(np.zeros(out_features))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.matmul(x, self.weight) + self.bias

    def set_identity(self) -> None:
        if self.in_features != self.out_features:
            raise ValueError("Only square maps can be set to the identity")
        self.weight.data[...] = np.eye(self.in_features)
        self.bias.data[...] = 0.0

    def set_zero(self) -> None:
        self.weight.data[...] = 0.0
        self.bias.data[...] = 0.0


class LayerNorm(Module):
    def __init__(self, dim: int) -> None:
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta)


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator) -> None:
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))

    def set_zero(self) -> None:
        self.fc2.set_zero()


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator) -> None:
        if dim % heads:
            raise ValueError(f"width {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.output = Linear(dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        n, dim = x.shape
        # (n, 3, heads, head_dim) -> (3, heads, n, head_dim)
        qkv = self.qkv(x).reshape(n, 3, self.heads, self.head_dim).transpose(1, 2, 0, 3)
        q, k, v = qkv[0], qkv[1], qkv[2]

        scores = ops.matmul(q, k.transpose(0, 2, 1)) * (1.0 / np.sqrt(self.head_dim))
        attention = ops.softmax(scores, axis=-1)
        context = ops.matmul(attention, v).transpose(1, 0, 2).reshape(n, dim)
        return self.output(context)


class TransformerBlock(Module):
    """Pre-norm block: x + MHSA(LN(x)), then x + MLP(LN(x))"""

    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng: np.random.Generator) -> None:
        self.norm1 = LayerNorm(dim)
        self.attention = MultiHeadSelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, dim * mlp_ratio, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attention(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class TransformerStack(Module):
    """`depth` blocks, then a layer norm unless `final_norm` is off; empty means identity"""

    def __init__(
        self,
        dim: int,
        depth: int,
        heads: int,
        mlp_ratio: int,
        rng: np.random.Generator,
        final_norm: bool = True,
    ) -> None:
        self.blocks = [TransformerBlock(dim, heads, mlp_ratio, rng) for _ in range(depth)]
        self.norm: Optional[LayerNorm] = LayerNorm(dim) if final_norm and depth else None

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        if self.norm is not None:
            x = self.norm(x)
        return x
