"""Smoke test for the pydypol extension.

Uses an installed pydypol if there is one, otherwise builds the cdylib with
cargo and loads it from a scratch directory.
"""

import json
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent
DATA = ROOT / "data"


def load():
    try:
        import pydypol
        return pydypol
    except ImportError:
        pass
    subprocess.run(
        ["cargo", "build", "--release", "-p", "dypol-python", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    built = ROOT / "target" / "release" / "libpydypol.so"
    scratch = pathlib.Path(tempfile.mkdtemp())
    shutil.copy(built, scratch / "pydypol.so")
    sys.path.insert(0, str(scratch))
    import pydypol
    return pydypol


def main():
    dp = load()
    policy = (DATA / "pap" / "01_P.xml").read_text()
    nurse = (DATA / "nurse_request.json").read_text()

    resp = json.loads(dp.evaluate([policy], nurse))
    assert resp == {"decision": "Permit", "obligations": []}, resp
    assert json.loads(dp.evaluate_dir(str(DATA / "pap"), nurse))["decision"] == "Permit"
    assert json.loads(dp.evaluate([], nurse))["decision"] == "NotApplicable"

    assert dp.combine("deny-overrides", ["Permit", "Deny"]) == "Deny"
    assert dp.combine("first-applicable", ["NotApplicable", "Permit", "Deny"]) == "Permit"

    assert dp.verify(policy) > 0

    engine = dp.Engine([policy], answers={"Department": "Heart Center"})
    assert json.loads(engine.open_session("s1", nurse))["decision"] == "Permit"
    event = (DATA / "events" / "insert_rule.ndjson").read_text().strip()
    audit = json.loads(engine.apply_event(event))
    assert audit["changeType"] == "insert-rule", audit
    assert json.loads(engine.response("s1"))["decision"] == "Permit"
    assert engine.counters("s1") == (1, 2, 2, 1, 1)
    assert len(engine) == 1

    silent = dp.Engine([policy])
    silent.open_session("s1", nurse)
    silent.apply_event(event)
    assert json.loads(silent.response("s1"))["decision"] == "IndeterminateD"

    csv = dp.run_bench("KMarket", "delete-condition", updates=3, sessions=20)
    assert len(csv.strip().splitlines()) == 3, csv

    try:
        dp.evaluate([policy], "{not json")
    except ValueError:
        pass
    else:
        raise AssertionError("malformed request accepted")

    print("pydypol smoke test passed")


if __name__ == "__main__":
    main()
