"""Trainable grayscale morphology with exact piecewise gradients.

The package provides:

* dense multichannel map handling with a portable binary format (`maps`),
* trainable dilation/erosion layers and opening/closing blocks (`morphology`),
* the balanced / hard-example-mined losses used to fit them (`losses`),
* rotated-segment geometry: ground-truth maps, proposals, NMS, contours
  (`geometry`),
* a deterministic SGD/Adam trainer plus a finite-difference gradient
  checker (`training`),
* a synthetic curved-strip corpus and detection-level evaluation
  (`synth`, `evaluation`, `pipeline`, `experiments`),
* scikit-learn style estimators wrapping the above (`estimators`),
* a CLI binding everything into reproducible runs (`cli`).
"""

from .maps import (
    MalformedHeaderError,
    MapFormatError,
    ShapeMismatchError,
    TruncatedPayloadError,
    load_map,
    map_add,
    new_map,
    save_map,
    save_pgm,
    threshold,
)
from .morphology import (
    MorphBlock,
    MorphLayer,
    StaleCacheError,
    StructuringElement,
    classical_closing,
    classical_opening,
    dilate,
    erode,
    load_block,
    save_block,
    trainable_closing,
    trainable_opening,
)
from .losses import (
    LossBundle,
    balanced_cross_entropy,
    ohem_cross_entropy,
    smooth_l1,
    total_loss,
)
from .geometry import (
    AnnotationFormatError,
    GeoMaps,
    TextSegment,
    bottom_long_side,
    build_geo_maps,
    extract_regions,
    nms_segments,
    propose_segments,
    rasterize_polygon,
    rasterize_segments,
    rotated_iou,
    sample_polyline,
    shrink_polygon,
    width_from_height,
)
from .training import TrainConfig, TrainReport, SGD, Adam, grad_check, train
from .synth import SynthConfig, SynthSample, generate_corpus, load_corpus, save_corpus
from .evaluation import DetectionReport, evaluate_detections
from .pipeline import PipelineConfig, detect
from .estimators import MorphBlockTransformer, MorphologyDetector

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AnnotationFormatError",
    "DetectionReport",
    "GeoMaps",
    "LossBundle",
    "MalformedHeaderError",
    "MapFormatError",
    "MorphBlock",
    "MorphBlockTransformer",
    "MorphLayer",
    "MorphologyDetector",
    "PipelineConfig",
    "SGD",
    "ShapeMismatchError",
    "StaleCacheError",
    "StructuringElement",
    "SynthConfig",
    "SynthSample",
    "TextSegment",
    "TrainConfig",
    "TrainReport",
    "TruncatedPayloadError",
    "balanced_cross_entropy",
    "bottom_long_side",
    "build_geo_maps",
    "classical_closing",
    "classical_opening",
    "detect",
    "dilate",
    "erode",
    "evaluate_detections",
    "extract_regions",
    "generate_corpus",
    "grad_check",
    "load_block",
    "load_corpus",
    "load_map",
    "map_add",
    "new_map",
    "nms_segments",
    "ohem_cross_entropy",
    "propose_segments",
    "rasterize_polygon",
    "rasterize_segments",
    "rotated_iou",
    "sample_polyline",
    "save_block",
    "save_corpus",
    "save_map",
    "save_pgm",
    "shrink_polygon",
    "smooth_l1",
    "threshold",
    "total_loss",
    "train",
    "trainable_closing",
    "trainable_opening",
    "width_from_height",
]
