"""Inter-frame attention blocks and the synthetic-motion demo, backed by C++."""

from ._sifa import (  # noqa: F401
    ConfigError,
    FormatError,
    NormMode,
    NumericError,
    OffsetSource,
    Sampling,
    ShapeError,
    SifaConfig,
    Variant,
    bilinear_sample,
    block_forward,
    demo_logits,
    flop_count,
    gen_dataset,
    gradcheck,
    motion_saliency,
    oracle_fixtures,
    read_tensor,
    render_clip,
    temporal_difference,
    write_tensor,
)
