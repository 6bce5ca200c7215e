"""pathtiles: whole-slide tile sampling, stain augmentation, streaming,
and downstream evaluation metrics."""

from . import errors
from .slide import (SlideHandle, TileImage, generate_synthetic_slide,
                    load_ground_truth_mask, open_slide, read_region)
from .patcher import (ForegroundMask, SamplerParams, TileCandidate,
                      compute_foreground_mask, foreground_fraction,
                      physical_extent, sample_tile)
from .stain import (HedParams, HsvRanges, StainMatrix, hed_augment,
                    hed_to_rgb, hsv_tile_filter, load_stain_matrix,
                    rgb_to_hed, rgb_to_hsv, sample_hed_params)
from .embed import (ScheduleConfig, ViewConfig, cls_mean_embedding,
                    effective_batch, highres_view_config, kde_uniformity_loss,
                    koleo_loss, patch_token_count)
from .metrics import (KShotSpec, LabeledEmbeddings, LinearProbe,
                      balanced_accuracy, build_kshot_split, dice_no_background,
                      kshot_protocol, pearson_mean, train_linear_probe)
from .viewgeom import (ResizeSpec, apply_resize_spec, center_crop,
                       effective_mpp_after_resize, resize_tile)
from .manifest import DatasetManifest, load_manifest
from .pipeline import StreamConfig, TileStream, export_shards, read_shard
from .estimators import HedAugmenter, HsvTileFilter, TileResizer

__version__ = "0.1.0"
