"""sketchforge: fit a budget of drawing strokes to an image with a
differentiable soft rasteriser, then compile them to SVG and plotter G-code."""

__version__ = "0.1.0"

from .canvas import (
    Canvas,
    TargetImage,
    downsample_avg2,
    load_image,
    resize_bilinear,
    save_ppm,
)
from .encoder import EncoderNet, load_skw1, random_encoder, write_skw1
from .errors import (
    FormatError,
    GcodeParseError,
    NumericAbort,
    SketchforgeError,
    ValidationError,
)
from .estimator import SketchApproximator, check_image
from .export import (
    GcodeProgram,
    Stroke,
    Toolpath,
    model_to_svg,
    model_to_toolpath,
    order_strokes,
    pen_up_travel,
    simulate_gcode,
    toolpath_to_gcode,
)
from .losses import LossSpec, loss_feature, loss_mse, loss_pyramid
from .optimizer import AdamState, OptimConfig, RunReport, adam_step, init_model, optimise
from .primitives import (
    ParamVector,
    Primitive,
    SketchModel,
    closest_point_segment,
    distance_and_grad,
    model_from_json,
    model_to_json,
    pack,
    spline_to_polyline,
    unpack,
)
from .rasterizer import RasterConfig, RasterTape, rasterize, rasterize_backward
from .rng import Xoshiro256PP

__all__ = [
    "AdamState",
    "Canvas",
    "EncoderNet",
    "FormatError",
    "GcodeParseError",
    "GcodeProgram",
    "LossSpec",
    "NumericAbort",
    "OptimConfig",
    "ParamVector",
    "Primitive",
    "RasterConfig",
    "RasterTape",
    "RunReport",
    "SketchApproximator",
    "SketchModel",
    "SketchforgeError",
    "Stroke",
    "TargetImage",
    "Toolpath",
    "ValidationError",
    "Xoshiro256PP",
    "adam_step",
    "check_image",
    "closest_point_segment",
    "distance_and_grad",
    "downsample_avg2",
    "init_model",
    "load_image",
    "load_skw1",
    "loss_feature",
    "loss_mse",
    "loss_pyramid",
    "model_from_json",
    "model_to_json",
    "model_to_svg",
    "model_to_toolpath",
    "optimise",
    "order_strokes",
    "pack",
    "pen_up_travel",
    "random_encoder",
    "rasterize",
    "rasterize_backward",
    "resize_bilinear",
    "save_ppm",
    "simulate_gcode",
    "spline_to_polyline",
    "toolpath_to_gcode",
    "unpack",
    "write_skw1",
]
