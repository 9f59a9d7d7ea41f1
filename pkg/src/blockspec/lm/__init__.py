"""Target models: exact tabular n-grams and a tiny causal transformer."""

from .tabular import (
    TabularTarget,
    cycle_tabular,
    random_tabular,
    tabular_next_dist,
    uniform_tabular,
    words_tabular,
)
from .transformer import (
    TinyTransformer,
    TransformerConfig,
    init_target_params,
    target_forward,
    verify_logits_for_block,
)
from .vocab import ReservedTokenError, Vocabulary

__all__ = [
    "ReservedTokenError",
    "TabularTarget",
    "TinyTransformer",
    "TransformerConfig",
    "Vocabulary",
    "cycle_tabular",
    "init_target_params",
    "random_tabular",
    "tabular_next_dist",
    "target_forward",
    "uniform_tabular",
    "verify_logits_for_block",
    "words_tabular",
]
