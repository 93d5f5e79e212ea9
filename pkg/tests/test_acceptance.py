"""Full pipeline on the default 20-scenario synthetic suite."""

import json

import pandas as pd
import pytest

from stpp_mot.synthetic import get_run_paths
from stpp_mot.synthetic.main_run_pipeline import EXIT_OK, main
from stpp_mot.training import LossTrace

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def standard_run(tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("standard") / "run"
    assert main(["pipeline", "--out-dir", str(out_dir), "--seed", "0"]) == (
        EXIT_OK
    )
    return get_run_paths.get_run_paths(out_dir)


@pytest.fixture(scope="module")
def report(standard_run):
    return json.loads(get_run_paths.report_path(standard_run).read_text())


def test_median_mota_improves_with_each_model_variant(report):
    median = {
        method: scores["median_mota"]
        for method, scores in report["methods"].items()
    }
    assert median["baseline"] < median["timeindep"]
    assert median["timeindep"] < median["sync"]
    assert median["sync"] <= median["syncasync"]


def test_event_ap_beats_the_constant_intensity(report):
    event_ap = report["methods"]["syncasync"]["event_ap"]
    assert event_ap >= report["prior_ap"] + 0.10


@pytest.mark.parametrize("variant", ["timeindep", "sync", "syncasync"])
def test_smoothed_nll_drops_within_500_iterations(standard_run, variant):
    trace = LossTrace.from_csv(get_run_paths.trace_path(standard_run, variant))
    assert len(trace) >= 501
    smoothed = pd.Series(trace.nll).rolling(50, min_periods=1).mean()
    assert smoothed[500] < smoothed[0]
