"""The eight acceptance criteria at their stated sizes and tolerances.

Each test prints one PASS/FAIL line (repeated in the terminal summary) and
fails if any record of its report fails.  Total runtime is tens of minutes on
one core.
"""
import time

import pytest

from voterlab.stats_harness import acceptance_configs, run_experiment

TITLES = {
    "1": "pair difference limit, constant profile, d=3",
    "2": "pair difference limit, logistic profile, d=3",
    "3": "occupation variance, d=5",
    "4": "occupation covariance, d=3",
    "5": "forward vs dual engines, N=25",
    "6": "Gaussian marginal of the scaled occupation time",
    "7": "kernel and limit-object property suite",
    "8": "b_t^N -> b_t",
}
RESULTS = []


@pytest.mark.slow
@pytest.mark.parametrize("criterion", sorted(TITLES))
def test_criterion(criterion, tmp_path_factory, capsys):
    cfg = acceptance_configs(output_dir=str(tmp_path_factory.mktemp(f"criterion{criterion}")))[criterion]
    start = time.perf_counter()
    report = run_experiment(cfg)
    elapsed = time.perf_counter() - start
    failed = [r for r in report.records if not r.passed]
    line = (f"criterion {criterion} ({TITLES[criterion]}): {'PASS' if report.passed else 'FAIL'}"
            f"  [{len(report.records) - len(failed)}/{len(report.records)} checks, {elapsed:.0f}s]")
    RESULTS.append(line)
    with capsys.disabled():
        print()
        for r in report.records:
            print("    " + r.line())
        print(line)
    assert report.passed, "; ".join(r.name for r in failed)
