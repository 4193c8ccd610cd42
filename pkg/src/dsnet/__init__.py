"""Dynamic shifting clustering and 4D panoptic segmentation for LiDAR point clouds."""

from .cluster import ClusterResult, bfs_cluster, dbscan, flat_kernel_step, heuristic_cluster, mean_shift
from .core import (
    ClassConfig,
    Frame,
    PanopticLabeling,
    Pose,
    decode_label,
    default_class_config,
    encode_label,
)
from .dshift import (
    DSConfig,
    WeightHead,
    center_offset_target,
    ds_forward,
    ds_iteration,
    ds_loss,
    ds_train_step,
    effective_bandwidth,
    train_ds,
    weight_head_forward,
)
from .fusion import FusionPolicy, filter_small_instances, majority_vote_fuse
from .geom import align_frame, bandwidth_mask, density_profile, farthest_point_sampling, tight_box_center
from .metrics import MetricReport, TrackReport, lstq, mean_iou, panoptic_quality, segment_iou
from .pipeline import segment_frame
from .synth import SceneSpec, generate_scene, generate_sequence, simulate_regressed_centers
from .temporal import fuse_window, overlapped_center_targets, run_4d_pipeline, stitch_ids

__version__ = "0.1.0"

__all__ = [
    "ClassConfig", "ClusterResult", "DSConfig", "Frame", "FusionPolicy", "MetricReport",
    "PanopticLabeling", "Pose", "SceneSpec", "TrackReport", "WeightHead",
    "align_frame", "bandwidth_mask", "bfs_cluster", "center_offset_target", "dbscan",
    "decode_label", "default_class_config", "density_profile", "ds_forward", "ds_iteration",
    "ds_loss", "ds_train_step", "effective_bandwidth", "encode_label", "farthest_point_sampling",
    "filter_small_instances", "flat_kernel_step", "fuse_window", "generate_scene",
    "generate_sequence", "heuristic_cluster", "lstq", "majority_vote_fuse", "mean_iou",
    "mean_shift", "overlapped_center_targets", "panoptic_quality", "run_4d_pipeline",
    "segment_frame", "segment_iou", "simulate_regressed_centers", "stitch_ids",
    "tight_box_center", "train_ds", "weight_head_forward",
]
