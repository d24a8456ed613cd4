"""The acceptance gate: every criterion at its stated tolerance.

Recipe CSVs are generated once per session into a temp directory; the
inline criteria (codec round trip, solver-vs-oracle, protocol property
grid) run their own computations.  Each test prints one verdict line.
"""

import pytest

from microcast import acceptance, scenarios


@pytest.fixture(scope="session")
def results_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("results")
    for name in scenarios.RECIPES:
        scenarios.write_recipe_output(scenarios.run_recipe(name), str(out))
    return str(out)


def report(r):
    print(f"criterion {r.number} {r.name}: {r.verdict} "
          f"[measured: {r.measured} | bound: {r.bound}]")
    assert r.passed, r.detail or r.measured


def test_criterion_1_codec_roundtrip():
    report(acceptance.evaluate_codec_roundtrip())


def test_criterion_2_codec_throughput(results_dir):
    report(acceptance.evaluate_codec_throughput(results_dir))


def test_criterion_3_solver_tracks_oracle():
    report(acceptance.evaluate_solver_oracle())


def test_criterion_4_rate_vs_group_size(results_dir):
    report(acceptance.evaluate_group_size_shapes(results_dir))


def test_criterion_5_rate_vs_local_loss(results_dir):
    report(acceptance.evaluate_loss_shapes(results_dir))


def test_criterion_6_local_traffic_ratios(results_dir):
    report(acceptance.evaluate_traffic_ratios(results_dir))


def test_criterion_7_download_adaptivity(results_dir):
    report(acceptance.evaluate_download_adaptivity(results_dir))


def test_criterion_8_congested_medium(results_dir):
    report(acceptance.evaluate_congestion(results_dir))


def test_criterion_9_protocol_properties():
    report(acceptance.evaluate_protocol_properties())
