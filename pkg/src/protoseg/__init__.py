"""Confidence-aware semi-supervised prototypical few-shot segmentation.

Segment a volumetric query from K annotated support slices in three stages:
initial prototypical segmentation, confidence-thresholded pseudo-labeling of
the query's own slices, and a final pass against the support+query augmented
prototype bank. Ships with deterministic feature extractors, a synthetic
phantom harness, Dice evaluation with ablation runners, and bit-exact file
formats behind the `protoseg` CLI.
"""

from .core import (
    BACKGROUND,
    WINDOW_ALL,
    Episode,
    EpisodeConfig,
    FeatureVolume,
    Fusion,
    LabelMask,
    Strategy,
    SupportPairing,
    VolumeImage,
    binary_mask_view,
    resample_mask,
)
from .errors import (
    BankError,
    ClassNotInEpisodeError,
    EmptyClassError,
    FormatError,
    KernelTooLargeError,
    ProtosegError,
    ShapeError,
    SpecError,
)
from .features import (
    BuiltinExtractor,
    BuiltinExtractorSpec,
    ExtractorKind,
    FeatureExtractor,
    PrecomputedFeatures,
    extract,
    load_embeddings,
    parse_extractor,
    save_embeddings,
)
from .proto import Prototype, PrototypeBank, Source, build_bank, query_prototype, support_prototype
from .scoring import (
    ProbabilityMap,
    PseudoMask,
    predict_mask,
    probability_map,
    pseudo_label,
    similarity,
)
from .pipeline import (
    SegmentationResult,
    Stage1Result,
    WindowSpec,
    run_episode,
    stage1_initial,
    stage2_pseudo_label,
    stage3_final,
)
from .phantom import (
    OrganSpec,
    PhantomSpec,
    SupportSelection,
    default_suite,
    generate,
    make_episode,
    suite_specs,
)
from .evaluate import (
    AblationAxis,
    AblationTable,
    DiceReport,
    DiceRow,
    ablate,
    dice,
    evaluate_episode,
    evaluate_suite,
    ground_truth,
)

__version__ = "0.1.0"
