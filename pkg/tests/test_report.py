from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import replace

import numpy as np
import pytest

from voxlink.errors import OneClassOnly
from voxlink.io import Manifest, ManifestEntry
from voxlink.linkage import PairScore, enumerate_pairs, evaluate
from voxlink.report import density_svg, results_table, write_report

SVG = "{http://www.w3.org/2000/svg}"


@pytest.fixture(scope="module")
def report():
    m = Manifest([ManifestEntry(f"s{s}_{k}.vol", f"s{s}", str(k), "original") for s in range(8) for k in range(4)])
    rng = np.random.default_rng(0)
    subj = m.subject_of()
    scores = [
        PairScore(p.id_a, p.id_b, name, float(rng.normal(0.9 if subj[p.id_a] == subj[p.id_b] else 0.4, 0.03)))
        for name in ("SSIM", "PCC")
        for p in enumerate_pairs(m)
    ]
    return evaluate(m, scores, "kde", dataset_id="toy<set>")


def test_results_table(report):
    lines = results_table(report).splitlines()
    assert lines[0] == "Dataset: toy<set>  pairs=496 intra=48 inter=448"
    assert lines[1].split() == ["Measure", "AUC", "Sens", "Spec", "Overlap", "tau", "Method"]
    assert set(lines[2]) == {"-"}
    rows = {line.split()[0]: line.split() for line in lines[3:]}
    assert set(rows) == {"SSIM", "PCC"}
    assert rows["SSIM"][1:4] == ["1.000", "1.000", "1.000"] and rows["SSIM"][-1] == "kde"


def test_density_svg_is_valid_and_marks_tau(report):
    result = report.measures["SSIM"]
    root = ET.fromstring(density_svg(result))
    assert root.tag == f"{SVG}svg"
    assert len(root.findall(f"{SVG}polyline")) == 2
    texts = [t.text for t in root.iter(f"{SVG}text")]
    assert any(t.startswith("SSIM: AUC 1.000") for t in texts)
    assert f"tau = {result.tau:.4g}" in texts
    assert any(line.get("stroke-dasharray") for line in root.iter(f"{SVG}line"))


def test_density_svg_without_curves(report):
    result = replace(report.measures["SSIM"], curves={})
    with pytest.raises(ValueError):
        density_svg(result)


def test_write_report(report, tmp_path):
    written = write_report(report, tmp_path / "out")
    assert set(written) == {"SSIM", "PCC", "table"}
    assert (tmp_path / "out" / "SSIM.svg").exists()
    assert written["table"].read_text() == results_table(report)
    first = {k: p.read_bytes() for k, p in written.items()}
    again = write_report(report, tmp_path / "out")
    assert {k: p.read_bytes() for k, p in again.items()} == first


def test_write_report_refuses_one_class(report, tmp_path):
    with pytest.raises(OneClassOnly):
        write_report(replace(report, n_intra=0), tmp_path)
