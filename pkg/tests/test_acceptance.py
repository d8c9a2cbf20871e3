"""Acceptance suite: every criterion at its stated tolerance.

One deterministic ``verify`` run feeds the per-criterion tests; the
determinism criterion repeats the run and compares manifest bytes.  A
summary line per criterion is printed at the end of the pytest session.
"""
import json

import pytest

from hullcap.acceptance import CRITERIA, DETERMINISM_ID
from hullcap.cli_runner import EXIT_OK, EXIT_VERIFY, default_config, run, with_overrides

SUMMARY = {}

# sub-checks that cannot hold as stated; see the decision log
KNOWN_FAILURES = {
    5: "Cap_1.05 of the r=0.5 disk is 3.768 by the closed form, 20% above pi; "
       "the star's Cap_1.05 sits 13% above its hull perimeter",
}


def _config(criteria="all", reference=""):
    cfg = with_overrides(default_config("verify"), "run", deterministic=True)
    return with_overrides(cfg, "verify", criteria=criteria, reference=reference)


@pytest.fixture(scope="module")
def verify_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("verify-first")
    lines = []
    manifest, code = run(_config(), out=str(out), echo=lines.append)
    folder = next(out.glob("verify-*"))
    records = {r["id"]: r for r in json.loads((folder / "criteria.json").read_text())}
    return {"manifest": manifest, "code": code, "folder": folder, "records": records,
            "lines": lines}


def _line(record):
    status = "PASS" if record["passed"] else "FAIL"
    failing = [c["name"] for c in record["checks"] if not c["passed"]]
    if record["error"]:
        failing.append("error")
    tail = f" | failing: {'; '.join(failing)}" if failing else ""
    return f"[{status}] criterion {record['id']:2d}: {record['title']}{tail}"


CHECKED = [cid for cid in sorted(CRITERIA) if cid != DETERMINISM_ID]


@pytest.mark.parametrize("cid", [
    pytest.param(cid, marks=pytest.mark.xfail(strict=True, reason=KNOWN_FAILURES[cid]))
    if cid in KNOWN_FAILURES else cid for cid in CHECKED])
def test_criterion(verify_run, cid):
    record = verify_run["records"][cid]
    SUMMARY[cid] = _line(record)
    print(SUMMARY[cid])
    for check in record["checks"]:
        print(f"    {check['name']}: {check['value']} (bound {check['bound']}) "
              f"{'ok' if check['passed'] else 'FAILED'}")
    assert not record["error"], record["error"]
    assert record["passed"], SUMMARY[cid]


def test_verify_exit_code_and_manifest(verify_run):
    m = verify_run["manifest"]
    expected = EXIT_OK if not m["verdict"]["failed"] else EXIT_VERIFY
    assert verify_run["code"] == expected
    assert sorted(m["verdict"]["passed"] + m["verdict"]["failed"]) == CHECKED
    assert "wall_time_s" not in m and m["deterministic"]


def test_criterion_14_determinism(verify_run, tmp_path_factory):
    reference = verify_run["folder"] / "manifest.json"
    out = tmp_path_factory.mktemp("verify-second")
    lines = []
    run(_config(reference=str(reference)), out=str(out), echo=lines.append)
    second = next(out.glob("verify-*")) / "manifest.json"
    same = second.read_bytes() == reference.read_bytes()
    title = CRITERIA[DETERMINISM_ID][0]
    SUMMARY[DETERMINISM_ID] = f"[{'PASS' if same else 'FAIL'}] criterion {DETERMINISM_ID}: {title}"
    print(SUMMARY[DETERMINISM_ID])
    assert any(line.startswith(f"[{'PASS' if same else 'FAIL'}] criterion 14") for line in lines)
    assert same
    assert ((second.parent / "criteria.json").read_bytes()
            == (verify_run["folder"] / "criteria.json").read_bytes())
