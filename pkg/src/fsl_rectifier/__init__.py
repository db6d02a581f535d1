"""Test-time input rectification for few-shot image classifiers.

A frozen few-shot model's test inputs are replaced by weighted averages over
translator-generated copies: a shape/style-disentangling GAN produces the
copies, a divergence-regressing selector picks which train-split neighbours
to generate from, and a seeded harness measures the effect episodically.
"""

from .augmenters import AugmenterSpec, augment_episode, mixup
from .config import default_config, load_config
from .data_pipeline import (
    DatasetHandle,
    Episode,
    ImageSample,
    apply_clahe,
    dedup_overlap,
    load_dataset,
    make_toy_dataset,
    sample_episode,
)
from .eval_harness import (
    Components,
    EvalReport,
    ExperimentPlan,
    PlanCell,
    centroid_pull_report,
    confidence_interval,
    run_eval,
    run_table,
)
from .fsl_backbones import FSLModel, embed, pretrain_encoder, protonet_logits, train_fsl
from .rectifier import (
    RectifiedRepresentation,
    RectifierConfig,
    double_weight_beta,
    generate_copies,
    mixture_weights,
    predict,
    rectify,
)
from .selector import (
    NeighbourPool,
    SelectorModel,
    kl_oracle,
    quality_score,
    sample_pool,
    select_neighbours,
    train_selector,
)
from .translator import (
    ShapeCode,
    StyleCode,
    TranslatorBundle,
    classifier_loss,
    feature_matching_loss,
    gan_loss,
    train_translator,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
