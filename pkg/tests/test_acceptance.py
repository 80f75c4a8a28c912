"""
End-to-end acceptance: ``qedsim verify --all`` at default scale, twice.

The first run (one worker) supplies the statistics and timings; the second
(two workers) must reproduce its verdict file byte for byte.  Each test
records one ``criterion N: PASS/FAIL`` line for the terminal summary.
"""
import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from conftest import ACCEPTANCE_LINES

SEED = 20261016


def _verify(out, workers):
    proc = subprocess.run([sys.executable, "-m", "qedsim.cli", "verify", "--all", "--seed", str(SEED),
                           "--workers", str(workers), "--out", str(out)],
                          capture_output=True, text=True, timeout=3600)
    run = Path(proc.stdout.strip().splitlines()[-1])
    return proc.returncode, run


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    code1, run1 = _verify(root / "w1", 1)
    code2, run2 = _verify(root / "w2", 2)
    verdicts = {}
    for line in (run1 / "verdicts.jsonl").read_text().splitlines():
        v = json.loads(line)
        verdicts[v["experiment"]] = v
    runtimes, stages = {}, {}
    with open(run1 / "summary.csv") as fh:
        for row in csv.DictReader(fh):
            if row["kind"] == "experiment":
                runtimes[row["experiment"]] = float(row["runtime_s"])
            elif row["kind"] == "stage":
                stages[(row["experiment"], row["name"])] = float(row["runtime_s"])
    return {"code": code1, "run1": run1, "run2": run2, "code2": code2, "verdicts": verdicts,
            "runtimes": runtimes, "stages": stages}


def _checks(runs, experiment, names):
    checks = {c["name"]: c for c in runs["verdicts"][experiment]["checks"]}
    return [checks[n] for n in names]


def _report(number, title, checks, seconds, budget):
    ok = all(c["pass"] for c in checks) and seconds < budget
    detail = ", ".join(f"{c['name']}={c['statistic']:.4g}" if isinstance(c["statistic"], float)
                       else f"{c['name']}={c['statistic']}" for c in checks)
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'} {title} "
                            f"[{detail}; {seconds:.1f}s < {budget:g}s]")
    return ok


def test_criterion_1_stationary_clt(runs):
    checks = _checks(runs, "poisson_clt", ["ks"])
    assert checks[0]["threshold"] == 0.03 and checks[0]["R"] == 10_000 and checks[0]["n"] == 400
    assert _report(1, "stationary CLT", checks, runs["runtimes"]["poisson_clt"], 5)


def test_criterion_2_infinite_server_fclt(runs):
    checks = _checks(runs, "mminf_fclt", ["ks_t0.25", "ks_t0.5", "ks_t1", "ks_t2", "covariance"])
    assert all(c["threshold"] == 0.05 for c in checks[:4]) and checks[4]["threshold"] == 3
    assert _report(2, "infinite-server FCLT marginals", checks, runs["runtimes"]["mminf_fclt"], 120)


def test_criterion_3_fluid(runs):
    names = ["content_n100", "content_n1000", "content_n10000", "ratio_100_400", "ratio_1000_4000"]
    checks = _checks(runs, "fluid", names)
    assert _report(3, "fluid limits", checks, runs["runtimes"]["fluid"], 120)


def test_criterion_4_martingale_identities(runs):
    checks = _checks(runs, "martingale_suite", ["identity", "oqv_exact", "orthogonality"])
    assert checks[0]["paths"] == 1000 and checks[0]["threshold"] == 1e-9
    seconds = runs["stages"][("martingale_suite", "identity")]
    assert _report(4, "martingale identities", checks, seconds, 60)


def test_criterion_5_martingale_moments(runs):
    checks = _checks(runs, "martingale_suite", ["moments_mminf", "moments_erlang_a", "fault_control"])
    seconds = runs["stages"][("martingale_suite", "moments_mminf")] + \
        runs["stages"][("martingale_suite", "moments_erlang_a")]
    assert _report(5, "martingale moments and fault control", checks, seconds, 120)


def test_criterion_6_lenglart(runs):
    checks = _checks(runs, "martingale_suite", ["lenglart"])
    assert checks[0]["R"] == 10_000 and len(checks[0]["rows"]) == 9
    seconds = runs["stages"][("martingale_suite", "lenglart")]
    assert _report(6, "Lenglart-Rebolledo inequality", checks, seconds, 60)


def test_criterion_7_erlang_a(runs):
    checks = _checks(runs, "erlang_a", ["ks2_t0.5", "ks2_t1", "ks2_t2", "ou_cross_check"])
    assert checks[3]["threshold"] == 0.03
    assert _report(7, "Erlang A limit", checks, runs["runtimes"]["erlang_a"], 300)


def test_criterion_8_finite_room(runs):
    checks = _checks(runs, "finite_room", ["pathwise_bound", "complementarity", "ks2_t0.5", "ks2_t1", "ks2_t2"])
    assert all(c["threshold"] == 0.06 for c in checks[2:])
    assert _report(8, "finite waiting room", checks, runs["runtimes"]["finite_room"], 300)


def test_criterion_9_map_solvers(runs):
    checks = _checks(runs, "maps_convergence", ["order", "perturbation"])
    assert checks[1]["pairs"] == 100
    assert _report(9, "integral map solvers", checks, runs["runtimes"]["maps_convergence"], 30)


def test_criterion_10_fourth_representation(runs):
    names = ["decomposition", "bhat_cov_0.5_1", "bhat_cov_1_2", "bhat_cov_0.5_2"]
    checks = _checks(runs, "fourth_rep", names)
    assert checks[0]["paths"] == 1000
    assert _report(10, "fourth representation", checks, runs["runtimes"]["fourth_rep"], 300)


def test_criterion_11_cross_construction(runs):
    checks = _checks(runs, "cross_construction", ["ks2"])
    assert checks[0]["threshold"] == 0.03
    assert _report(11, "time change vs thinning", checks, runs["runtimes"]["cross_construction"], 120)


def test_criterion_12_determinism(runs):
    a = (runs["run1"] / "verdicts.jsonl").read_bytes()
    b = (runs["run2"] / "verdicts.jsonl").read_bytes()
    same = a == b and len(a) > 0
    ACCEPTANCE_LINES.append(f"criterion 12: {'PASS' if same else 'FAIL'} byte-identical verdicts.jsonl "
                            f"across two runs (1 and 2 workers, {len(a)} bytes)")
    assert same


def test_every_experiment_passes(runs):
    statuses = {name: v["status"] for name, v in runs["verdicts"].items()}
    assert all(s == "pass" for s in statuses.values()), statuses
    assert runs["code"] == 0 and runs["code2"] == 0
