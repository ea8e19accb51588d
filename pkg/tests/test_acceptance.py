"""Benchmark acceptance gates, one PASS/FAIL line each.

Criteria 1 to 5 read the cached five-seed desk-scale runs (1000 train /
300 test, T=80, D=3); criterion 6 re-runs the named property tests in a
child pytest process.
"""

import subprocess
import sys
from pathlib import Path

import pytest

from winit import evaluation as ev
from winit.config import derive_seed
from winit.pipeline import ROLE_RANDOM, summarize_ranking

from conftest import benchmark_runs

pytestmark = pytest.mark.slow

TESTS = Path(__file__).parent


def _row(runs, tag):
    return summarize_ranking(runs, tag)


def _fmt(row):
    return f"AUROC {row['auroc_mean']:.3f}±{row['auroc_std']:.3f} AUPRC {row['auprc_mean']:.3f}±{row['auprc_std']:.3f}"


def test_criterion_1_spike_ranking(report_criterion):
    _, runs = benchmark_runs("spike")
    fit, ifit, winit = (_row(runs, t) for t in ("FIT", "IFIT", "WinIT-N8"))
    ok = (fit["auroc_mean"] >= 0.97 and winit["auroc_mean"] >= 0.94 and winit["auprc_mean"] >= 0.80
          and ifit["auroc_mean"] >= 0.92)
    report_criterion(1, ok, f"FIT {_fmt(fit)}; IFIT {_fmt(ifit)}; WinIT-N8 {_fmt(winit)}")
    assert ok


def test_criterion_2_delayed_ranking(report_criterion):
    _, runs = benchmark_runs("delayed")
    fit, winit = _row(runs, "FIT"), _row(runs, "WinIT-N8")
    ok = (fit["auroc_mean"] <= 0.62 and fit["auprc_mean"] <= 0.05
          and winit["auroc_mean"] >= 0.94 and winit["auprc_mean"] >= 0.80)
    report_criterion(2, ok, f"FIT {_fmt(fit)}; WinIT-N8 {_fmt(winit)}")
    assert ok


def test_criterion_3_runtime(report_criterion):
    _, runs = benchmark_runs("spike")
    secs = {tag: sum(r.seconds(tag) for r in runs) for tag in ("FIT", "IFIT", "WinIT-N8")}
    ok = secs["IFIT"] <= 0.5 * secs["FIT"] and secs["WinIT-N8"] <= 2.0 * secs["FIT"]
    detail = ", ".join(f"{k} {v:.1f}s" for k, v in secs.items())
    report_criterion(3, ok, f"{detail}; IFIT/FIT {secs['IFIT'] / secs['FIT']:.2f}, "
                            f"WinIT/FIT {secs['WinIT-N8'] / secs['FIT']:.2f}")
    assert ok


def test_criterion_4_window_ablation(report_criterion):
    _, runs = benchmark_runs("delayed")
    rows = {n: _row(runs, f"WinIT-N{n}") for n in (1, 4, 8)}
    ok = rows[1]["auprc_mean"] <= 0.10 and rows[4]["auprc_mean"] >= 0.80 and rows[8]["auprc_mean"] >= 0.80
    report_criterion(4, ok, "; ".join(f"N={n} AUPRC {r['auprc_mean']:.3f}" for n, r in rows.items()))
    assert ok


def test_criterion_5_masking_drop(report_criterion):
    cfg, runs = benchmark_runs("spike")
    spec = ev.MaskSpec("top_percent", 5)
    wins, pairs = 0, []
    for r in runs:
        means = r.train.feature_means()
        rnd = ev.random_importance(r.test, derive_seed(cfg.master_seed, r.seed, ROLE_RANDOM))
        winit = ev.auc_drop(r.models.predictor, r.test, r.results["WinIT-N8"], spec, means, "all").drop
        base = ev.auc_drop(r.models.predictor, r.test, rnd, spec, means, "all").drop
        wins += winit > base
        pairs.append(f"{winit:.3f}/{base:.3f}")
    ok = wins >= 4
    report_criterion(5, ok, f"WinIT>random in {wins}/5 seeds (WinIT/random drops {', '.join(pairs)})")
    assert ok


PROPERTY_SUITES = [
    "test_explainers.py::TestKL",
    "test_explainers.py::test_kl_nonnegative_property",
    "test_explainers.py::TestIdentities::test_winit_window_one_equals_ifit",
    "test_explainers.py::TestIdentities::test_window_one_matches_scalar_ifit",
    "test_explainers.py::TestIdentities::test_telescoping",
    "test_explainers.py::TestIdentities::test_fit_full_set_is_temporal_shift",
    "test_explainers.py::TestQuadratureOracle",
    "test_seqmodels.py::TestGradients",
    "test_seqmodels.py::TestPredictor::test_causality",
    "test_seqmodels.py::TestPredictor::test_training_is_deterministic",
    "test_seqmodels.py::TestGenerator::test_training_is_deterministic",
    "test_explainers.py::TestExplainSample::test_deterministic",
    "test_seqdata.py::TestSpikeDataset::test_pure_function_of_config",
    "test_seqdata.py::TestFileFormat::test_round_trip",
    "test_seqdata.py::test_round_trip_property",
    "test_seqmodels.py::TestCheckpoints",
    "test_explainers.py::test_importance_file_round_trip",
]


def test_criterion_6_property_suites(report_criterion):
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *(str(TESTS / n) for n in PROPERTY_SUITES)],
        cwd=TESTS.parent, capture_output=True, text=True,
    )
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()[-200:]
    ok = proc.returncode == 0
    report_criterion(6, ok, f"{len(PROPERTY_SUITES)} suites: {tail}")
    assert ok, proc.stdout[-3000:]
