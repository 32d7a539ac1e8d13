"""Spherical-Gaussian appearance engine.

Stylizes a bare triangle mesh by jointly optimizing a spatially varying
BRDF, a learned normal-offset field and SG environment lighting against
either target images or a remote text-image embedding service, through a
closed-form differentiable renderer.
"""

from .appearance import (
    AppearanceConfig,
    StyleParameters,
    init_style,
    load_style,
    save_style,
)
from .geometry import (
    Camera,
    TriangleMesh,
    load_mesh,
    make_cube,
    make_icosphere,
    normalize_mesh,
    sample_cameras,
    save_obj,
)
from .lighting import (
    EnvironmentMap,
    eval_envmap,
    fit_envmap_from_image,
    init_envmap,
    total_energy,
)
from .optimization import (
    ImageTargetObjective,
    TextPromptObjective,
    TrainConfig,
    train,
)
from .renderer import (
    RenderedView,
    edit_material,
    export_components,
    relight,
    render_view,
    shade_ray,
)
from .sg import (
    DegenerateAxisError,
    SphericalGaussian,
    sg_energy,
    sg_eval,
    sg_inner_product,
    sg_integral,
    sg_product,
)

__version__ = "0.1.0"

__all__ = [
    "AppearanceConfig",
    "StyleParameters",
    "init_style",
    "save_style",
    "load_style",
    "Camera",
    "TriangleMesh",
    "load_mesh",
    "save_obj",
    "normalize_mesh",
    "sample_cameras",
    "make_cube",
    "make_icosphere",
    "EnvironmentMap",
    "init_envmap",
    "eval_envmap",
    "total_energy",
    "fit_envmap_from_image",
    "TrainConfig",
    "TextPromptObjective",
    "ImageTargetObjective",
    "train",
    "RenderedView",
    "render_view",
    "relight",
    "edit_material",
    "export_components",
    "shade_ray",
    "SphericalGaussian",
    "DegenerateAxisError",
    "sg_eval",
    "sg_product",
    "sg_integral",
    "sg_inner_product",
    "sg_energy",
    "__version__",
]
