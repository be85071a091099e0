from .ap import (Detection, EvalReport, FrequencyBuckets, GroundTruth, assign_frequency_buckets,
                 detections_to_results, evaluate_ap, interpolated_ap, postprocess)
from .latency import LatencyStats, benchmark_latency, flop_estimate

__all__ = [
    "Detection", "EvalReport", "FrequencyBuckets", "GroundTruth", "LatencyStats", "assign_frequency_buckets",
    "benchmark_latency", "detections_to_results", "evaluate_ap", "flop_estimate", "interpolated_ap",
    "postprocess",
]
