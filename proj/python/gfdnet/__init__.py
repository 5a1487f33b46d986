"""Python front end of the gfd library: fingerprint extraction, attribution,
detection and the GLCM analysis, over numpy arrays.

Images are float32 arrays of shape (3, H, W) with values in [-1, 1]; use
read_image() to load one from disk.
"""

from ._core import (
    GfdError,
    Model,
    classifier_shapes,
    composite,
    glcm_correlation_vector,
    glcm_labels,
    inference_path_shapes,
    learning_rate_at,
    make_toy,
    read_image,
    set_log_level,
    total_g,
    toy_pattern,
    train,
    write_image,
)

__all__ = [
    "GfdError",
    "Model",
    "classifier_shapes",
    "composite",
    "glcm_correlation_vector",
    "glcm_labels",
    "inference_path_shapes",
    "learning_rate_at",
    "make_toy",
    "read_image",
    "set_log_level",
    "total_g",
    "toy_pattern",
    "train",
    "write_image",
]
