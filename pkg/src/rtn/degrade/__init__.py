"""Synthetic old-film degradation: contaminant blending, quality loss and temporal rendering."""

from .ops import (
    BlendMode,
    BlurParams,
    Interp,
    NoiseKind,
    apply_noise,
    blend_contaminant,
    blur_kernel,
    color_jitter,
    gaussian_blur,
    jpeg_codec,
    jpeg_roundtrip,
    resample_roundtrip,
)
from .pipeline import (
    STAGE_ORDER,
    DefectMaskSequence,
    FrameParams,
    degrade_sequence,
    draw_frame_params,
    render_frame,
    rerender,
)
from .recipe import (
    LEGAL_RANGES,
    SAMPLE_RANGES,
    DegradationRecipe,
    RecipeError,
    identity_recipe,
    sample_recipe,
)
from .templates import (
    ContaminantTemplate,
    Placement,
    load_template_library,
    place_template,
    save_template_library,
    synthetic_templates,
)
