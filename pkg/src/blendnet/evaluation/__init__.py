"""IoU, NMS, AP/mAP, stratified recall, attention back-projection and result files."""
from .attention import project_attention
from .boxes import DegenerateBoxError, Detection, iou, iou_matrix, nms, nms_indices
from .metrics import (VISIBILITY_BINS, GroundTruth, PrCurve, StratumRow, average_precision, match_detections,
                      mean_average_precision, stratified_report, threshold_sweep_ap)
from .results import ResultsFormatError, csv_table, parse_results, read_results, text_table, write_results

__all__ = [
    "DegenerateBoxError", "Detection", "GroundTruth", "PrCurve", "ResultsFormatError", "StratumRow",
    "VISIBILITY_BINS", "average_precision", "csv_table", "iou", "iou_matrix", "match_detections",
    "mean_average_precision", "nms", "nms_indices", "parse_results", "project_attention", "read_results",
    "stratified_report", "text_table", "threshold_sweep_ap", "write_results",
]
