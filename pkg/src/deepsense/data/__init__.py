"""Synthetic traces, Kalman-smoothed targets, HHAR ingestion and sample containers."""

from .hhar import (ACTIVITIES, HHAR_COLUMNS, USERS, HHARRecord, RecordList, SampleSet, kfold_assignment,
                   load_hhar_csv, make_samples, split, synthetic_hhar_records, write_hhar_csv)
from .kalman import GaussianTarget, kalman_smooth, rts_smooth, targets_to_arrays
from .samples import Sample, load_samples, save_samples
from .simulate import (KinematicTrace, SyntheticIMUConfig, read_trace_csv, read_truth_csv, simulate_trace,
                       write_trace_csv, write_truth_csv)
from .cartrack import interval_boundaries, make_cartrack_sample, make_cartrack_samples
from .toy import toy_classification_samples

__all__ = [
    "ACTIVITIES", "HHAR_COLUMNS", "USERS", "HHARRecord", "RecordList", "SampleSet", "kfold_assignment",
    "load_hhar_csv", "make_samples", "split", "synthetic_hhar_records", "write_hhar_csv",
    "GaussianTarget", "kalman_smooth", "rts_smooth", "targets_to_arrays",
    "Sample", "load_samples", "save_samples",
    "KinematicTrace", "SyntheticIMUConfig", "read_trace_csv", "read_truth_csv", "simulate_trace",
    "write_trace_csv", "write_truth_csv", "interval_boundaries", "make_cartrack_sample", "make_cartrack_samples",
    "toy_classification_samples",
]
