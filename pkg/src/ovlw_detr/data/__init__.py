from .augment import augment, hflip, resize
from .samples import GroundingSample, read_grounding_annotations, write_grounding_annotations
from .sampler import MixtureConfig, epoch_subsample, mixing_sampler
from .synthetic import SyntheticShapesSpec, generate_shapes_dataset, write_shapes_dataset
from .vocab import build_online_vocabulary

__all__ = [
    "GroundingSample", "MixtureConfig", "SyntheticShapesSpec", "augment", "build_online_vocabulary",
    "epoch_subsample", "generate_shapes_dataset", "hflip", "mixing_sampler", "read_grounding_annotations",
    "resize", "write_grounding_annotations", "write_shapes_dataset",
]
