"""Model definitions: the fusion classifier and the multi-task U-Net."""

from .mrf_dcn import (
    MrfDcn,
    TripleDataset,
    build_mrf_dcn,
    count_parameters,
    extract_features,
)
from .mtl_unet import LossWeights, MtlDataset, MtlUnet, build_mtl_unet, multitask_loss

__all__ = [
    "MrfDcn",
    "TripleDataset",
    "build_mrf_dcn",
    "count_parameters",
    "extract_features",
    "LossWeights",
    "MtlDataset",
    "MtlUnet",
    "build_mtl_unet",
    "multitask_loss",
]
