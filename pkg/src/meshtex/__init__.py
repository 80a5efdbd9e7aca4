"""meshtex: synchronized multi-view diffusion texturing for UV meshes."""

from .atlas import (
    TexelScatter,
    TextureAtlas,
    aggregate,
    atlas_for_mesh,
    backproject,
    dilate_chart_mask,
    export_png,
    voronoi_fill,
)
from .camera import CameraPose, ViewSchedule, stock_schedule
from .config import RunConfig, parse_config
from .diffusion import (
    DenoiserOutput,
    NoiseSchedule,
    ToyDenoiser,
    ViewConditioning,
    add_noise,
    cfg_combine,
    ddim_step,
    make_schedule,
    sync_sample,
)
from .exceptions import MeshtexError
from .geometry import Mesh, OrientationRemap, load_obj, normalize_to_unit_sphere
from .guidance import (
    AttentionWeights,
    FeatureSeq,
    GuidanceBundle,
    build_direction_prompt,
    cross_attention,
    decoupled_attention,
    direction_label,
)
from .pipeline import RunReport, run
from .raster import RasterFrame, rasterize, sample_atlas

__version__ = "0.1.0"

__all__ = [
    "AttentionWeights",
    "CameraPose",
    "DenoiserOutput",
    "FeatureSeq",
    "GuidanceBundle",
    "Mesh",
    "MeshtexError",
    "NoiseSchedule",
    "OrientationRemap",
    "RasterFrame",
    "RunConfig",
    "RunReport",
    "TexelScatter",
    "TextureAtlas",
    "ToyDenoiser",
    "ViewConditioning",
    "ViewSchedule",
    "add_noise",
    "aggregate",
    "atlas_for_mesh",
    "backproject",
    "build_direction_prompt",
    "cfg_combine",
    "cross_attention",
    "ddim_step",
    "decoupled_attention",
    "dilate_chart_mask",
    "direction_label",
    "export_png",
    "load_obj",
    "make_schedule",
    "normalize_to_unit_sphere",
    "parse_config",
    "rasterize",
    "run",
    "sample_atlas",
    "stock_schedule",
    "sync_sample",
    "voronoi_fill",
]
