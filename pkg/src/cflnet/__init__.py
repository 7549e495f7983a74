"""Two-stream forgery localization network trained with a patch-level
supervised contrastive objective."""

from cflnet.srm import srm_kernels, apply_srm, SrmFilter
from cflnet.contrastive import (
    partition_and_pool,
    downsample_mask_majority,
    supcon_loss,
    pixel_supcon_oracle,
    weighted_ce_loss,
    combined_loss,
    LossBreakdown,
)
from cflnet.model import CFLNet, ModelConfig, ModelOutput, save_checkpoint, load_checkpoint
from cflnet.metrics import pixel_auc, evaluate_model, cross_dataset_eval, export_mean_features

__version__ = "0.1.0"
