"""Raw-pixel vision-language data path: patch-aligned resizing, patch
projection, vision spans, sequence packing, loss masking, data mixtures and
a toy decoder for end-to-end checks."""
from .encoding import (
    PAD, VISION_BEGIN, VISION_END, VROW_SEP, Pad, Patch, ProjectorWeights, Special,
    SpecialKind, Text, VisionSpanEncoder, Vocabulary, embed_sequence, layout_vision_span,
    normalize_patch, project_patches,
)
from .mixture import (
    DatasetEntry, MixtureSpec, Modality, TokenAccount, account_tokens, plan_schedule,
    stage_curriculum,
)
from .packing import (
    Example, ExampleKind, PackedSequence, SequencePacker, build_attention_predicate,
    build_loss_mask, pack_examples,
)
from .packfile import deserialize, serialize
from .preprocess import (
    ImageDims, ImageResizer, PatchExtractor, PatchGrid, PreprocessConfig, RawImage,
    extract_patches, reassemble, resize_image, resize_output_dims,
)

__version__ = "0.1.0"

__all__ = [
    "PAD",
    "VISION_BEGIN",
    "VISION_END",
    "VROW_SEP",
    "Pad",
    "Patch",
    "ProjectorWeights",
    "Special",
    "SpecialKind",
    "Text",
    "VisionSpanEncoder",
    "Vocabulary",
    "embed_sequence",
    "layout_vision_span",
    "normalize_patch",
    "project_patches",
    "DatasetEntry",
    "MixtureSpec",
    "Modality",
    "TokenAccount",
    "account_tokens",
    "plan_schedule",
    "stage_curriculum",
    "Example",
    "ExampleKind",
    "PackedSequence",
    "SequencePacker",
    "build_attention_predicate",
    "build_loss_mask",
    "pack_examples",
    "deserialize",
    "serialize",
    "ImageDims",
    "ImageResizer",
    "PatchExtractor",
    "PatchGrid",
    "PreprocessConfig",
    "RawImage",
    "extract_patches",
    "reassemble",
    "resize_image",
    "resize_output_dims",
]

