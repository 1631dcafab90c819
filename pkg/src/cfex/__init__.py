"""Minimum-correct / minimum-incorrect filter explanations for frozen CNN
classifier heads operating on GAP features."""

from .errors import (CfexError, DivergenceError, EmptySelectionError, FormatError,
                     ValidationError)
from .formats import (ClassifierHead, DatasetManifest, ExplainerCheckpoint,
                      FeatureBundle, ImageRecord, KIND_MC, KIND_MI,
                      load_checkpoint, load_classifier_head, load_feature_bundle,
                      load_manifest, save_checkpoint, save_classifier_head,
                      save_feature_bundle, save_manifest)
from .heads import (McHead, MiHead, checkpoint_from_mc, checkpoint_from_mi,
                    mc_forward_infer, mc_forward_train, mc_from_checkpoint,
                    mi_forward, mi_from_checkpoint)
from .losses import (LossBreakdown, ce_loss, finite_diff_check, grad_mc, grad_mi,
                     l1_loss, logits_contribution, mc_total_loss, mi_total_loss)
from .model import Prediction, additive_classify, classify, masked_classify, softmax
from .train import (TrainConfig, TrainReport, select_subset, sgd_momentum_step,
                    synth_dataset, train_classifier_head, train_mc, train_mi)
from .explain import (ExplanationReport, Heatmap, explain_mc, explain_mi,
                      rf_heatmap, top_activating_images, topk_filters, write_pgm)
from .analysis import (AblationResult, FilterStats, disable_filters_eval,
                       global_filter_stats, global_mc_set, logits_ablation,
                       misclassification_report, sparsity_sweep)
from .oracle import OracleResult, min_single_addition, min_sufficient_mask

__version__ = "0.1.0"
