"""Contactable / contact-intolerant split of lidar scans from image masks."""
from .filters import CorruptedFilter, GroundTruthFilter, RejectAllFilter, RemoteFilter
from .masks import Mask, iou, rle_decode, rle_encode, union_bitmap
from .memory import (
    CandidateSet,
    MaskMemory,
    PartitionConfig,
    greedy_matches,
    reconcile,
    refresh_memory,
    should_refresh,
    warp_mask,
    warp_mask_list,
    warp_masks,
)
from .partition import PartitionedScan, partition_metrics, partition_scan, refine_partition
from .pipeline import Partitioner, PerceptionConfig
