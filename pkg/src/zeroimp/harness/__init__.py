from zeroimp.harness.experiment import ExperimentSpec, ResultRow, median_by, read_results, run_experiment
from zeroimp.harness.summarize import MalformedResults, summarize
from zeroimp.harness.verify import VerificationReport, run_verification

__all__ = [
    "ExperimentSpec",
    "MalformedResults",
    "ResultRow",
    "VerificationReport",
    "median_by",
    "read_results",
    "run_experiment",
    "run_verification",
    "summarize",
]
