"""Shared fixtures and the per-criterion acceptance summary.

Acceptance tests carry ``@pytest.mark.acceptance(criterion=N)``.  After the
run one PASS/FAIL line is printed per criterion; a criterion passes only if
every test tagged with it passed.  Tests may attach a one-line detail with
``request.node.user_properties.append(("detail", text))``.
"""

from __future__ import annotations

from collections import defaultdict

import pytest

CRITERIA = {
    1: "simulated 30x4 cohort: AUC >= 0.99, sensitivity >= 0.95, specificity >= 0.99 (KDE)",
    2: "ablation ordering of intra SSIM and SSIM overlap, p < 0.01",
    3: "KDE threshold consistency across two seeded cohorts",
    4: "measure oracles on 200 random pairs, identity battery",
    5: "evaluation-statistic oracles, AUC rank invariance",
    6: "registration recovery of 50 affines, monotone cost",
    7: "KDE valley on 100 two-Gaussian mixtures",
    8: "negative_fid scalar closed form",
}

_outcomes: dict = defaultdict(list)
_details: dict = defaultdict(list)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or "criterion" not in marker.kwargs:
        return
    crit = marker.kwargs["criterion"]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes[crit].append(rep.passed)
        _details[crit].extend(v for k, v in item.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(CRITERIA):
        if crit not in _outcomes:
            continue
        status = "PASS" if all(_outcomes[crit]) else "FAIL"
        terminalreporter.write_line(f"criterion {crit}: {status}  {CRITERIA[crit]}")
        for d in _details[crit]:
            terminalreporter.write_line(f"    {d}")
