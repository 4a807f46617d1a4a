import numpy as np

from volumae.config import EncoderConfig
from volumae.model.layers import Module, TransformerStack
from volumae.numerics import Tensor


class Encoder(Module):
    """
    Plain full-attention transformer applied to the visible tokens of one branch:
    `depth` pre-norm blocks and nothing after them, so the output of the last
    block goes to the volume unnormalized.
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator) -> None:
        self.stack = TransformerStack(
            config.width, config.depth, config.heads, config.mlp_ratio, rng, final_norm=False
        )

    def __call__(self, tokens: Tensor) -> Tensor:
        return self.stack(tokens)


def encode(tokens: Tensor, encoder: Encoder) -> Tensor:
    """(N_vis, C) -> (N_vis, C); only visible tokens ever reach an encoder"""

    if tokens.shape[0] < 1:
        raise ValueError("encode() needs at least one visible token")
    return encoder(tokens)
