"""Smoke test for the labloom_py extension: validate and run a shipped demo."""

import csv
import io
import math
import pathlib
import sys
import tempfile

import labloom_py

ROOT = pathlib.Path(__file__).resolve().parents[3]
DEMO = ROOT / "demos" / "case_c"


def main() -> int:
    xml = (DEMO / "workflow.xml").read_text()
    report = labloom_py.validate(xml)
    assert report["ok"], report

    names = {p["name"] for p in labloom_py.plugins()}
    assert "binarizer" in names, names

    ei = labloom_py.expected_improvement(0.0, 1.0, 0.0)
    assert math.isclose(ei, 1.0 / math.sqrt(2.0 * math.pi), rel_tol=1e-12), ei

    with tempfile.TemporaryDirectory() as runs:
        runs_a = pathlib.Path(runs) / "a"
        runs_b = pathlib.Path(runs) / "b"
        a = labloom_py.Run(xml, str(runs_a), seed=11, base_dir=str(DEMO), headless=True)
        assert a.phase == "running"
        first = a.step()
        assert first[0]["type"] == "node-started" and first[-1]["type"] == "node-finished", first
        assert a.run_to_end() == "completed"
        events = a.events()
        assert events[-1]["type"] == "run-completed"
        assert [e["index"] for e in events] == list(range(len(events)))

        b = labloom_py.Run(xml, str(runs_b), seed=11, base_dir=str(DEMO), headless=True)
        b.run_to_end()
        ids_a = sorted(r["artifact_id"] for r in a.artifacts)
        ids_b = sorted(r["artifact_id"] for r in b.artifacts)
        assert ids_a == ids_b, "same seed, same artifacts"

        case_a = ROOT / "demos" / "case_a"
        c = labloom_py.Run((case_a / "workflow.xml").read_text(), runs, seed=7, base_dir=str(case_a), headless=True)
        assert c.run_to_end() == "completed"
        reader = csv.DictReader(io.StringIO(labloom_py.export_scalars(c.run_dir, "csv")))
        rows = list(reader)
        assert reader.fieldnames == ["node", "port", "iteration", "value"]
        imaged = [e for e in c.events() if e["type"] == "node-finished" and e["node_id"] == "imaging"]
        assert len([r for r in rows if r["node"] == "imaging"]) == len(imaged)

        try:
            labloom_py.validate("<workflow")
        except ValueError:
            pass
        else:
            raise AssertionError("malformed XML must raise ValueError")

    print(f"labloom_py smoke test passed: {len(ids_a)} artifacts, {len(rows)} scalar rows")
    return 0


if __name__ == "__main__":
    sys.exit(main())
