import csv
import io
import json
import signal
import subprocess
import sys

import numpy as np
import pytest

from energyref.cli import main, render_report
from energyref.client import RefereeClient
from energyref.dataset import encode_pnm, PixelMatrix
from energyref.scoring import ScoreReport, build_score_report, score_statistics

import oracles
from helpers import oracle_rows
from test_scoring import submission_like_scores

CHAMPIONS = [("2015", 0.02971, 1.634), ("2016", 0.03469, 0.789), ("2017", 0.24838, 2.082),
             ("2018-t2", 0.38981, 1.540), ("2018-t3", 0.18318, 0.412)]
CHAMPION_SCORES = [0.0182, 0.0440, 0.1193, 0.2531, 0.4446]
CHAMPION_RATIOS = [1.0, 2.4, 6.6, 13.9, 24.5]


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def write_reports(tmp_path, rows):
    paths = []
    for label, m, e in rows:
        p = tmp_path / f"{label}.report"
        p.write_text(build_score_report(m, e, 1, 1, label=label).dumps())
        paths.append(str(p))
    return paths


class TestReport:
    def test_champion_table(self, tmp_path, capsys):
        paths = write_reports(tmp_path, CHAMPIONS)
        code, out, _ = run(["report", "--csv", *paths], capsys)
        assert code == 0
        rows = list(csv.DictReader(io.StringIO(out.split("mean,")[0])))
        assert [r["label"] for r in rows] == [c[0] for c in CHAMPIONS]
        for r, score, ratio in zip(rows, CHAMPION_SCORES, CHAMPION_RATIOS):
            assert float(r["score"]) == pytest.approx(score, abs=5e-4)
            assert float(r["ratio"]) == pytest.approx(ratio, abs=0.1)

    def test_text_layout(self, tmp_path, capsys):
        code, out, _ = run(["report", *write_reports(tmp_path, CHAMPIONS[:2])], capsys)
        lines = out.splitlines()
        assert lines[0].split() == ["label", "mAP", "energy", "score", "ratio"]
        assert lines[1].split()[-2:] == ["0.0182", "1.0"]
        assert any(l.startswith("median") for l in lines)

    def test_single_report_has_no_statistics(self, tmp_path, capsys):
        _, out, _ = run(["report", *write_reports(tmp_path, CHAMPIONS[:1])], capsys)
        assert "mean" not in out

    def test_statistics_over_submissions(self):
        scores = submission_like_scores()
        reports = [ScoreReport(s, 1.0, s, 1, 1) for s in scores]
        text = render_report(reports, fmt="csv")
        stats = dict(line.split(",") for line in text.splitlines()[-4:])
        o = oracles.stats_oracle(scores, 0.05)
        for key in ("mean", "median", "mode", "stddev"):
            assert float(stats[key]) == pytest.approx(o[key], abs=5e-5)

    def test_bad_baseline(self, tmp_path, capsys):
        code, _, err = run(["report", "--baseline", "4", *write_reports(tmp_path, CHAMPIONS[:2])], capsys)
        assert code == 4 and "baseline" in err

    def test_bad_report_file(self, tmp_path, capsys):
        p = tmp_path / "x.report"
        p.write_text("nonsense\n")
        code, _, err = run(["report", str(p)], capsys)
        assert code == 3 and err.startswith("error[parse_error]") and str(p) in err


class TestScore:
    def test_oracle_with_energy(self, small_fixture, tmp_path, capsys):
        dets = tmp_path / "d.txt"
        dets.write_text(oracle_rows(small_fixture))
        code, out, _ = run(["score", "--detections", str(dets), "--manifest",
                            str(small_fixture.source), "--energy-wh", "0.5"], capsys)
        r = ScoreReport.loads(out)
        assert code == 0 and r.map_value == 1.0 and r.score == 2.0

    def test_offline_matches_online(self, referee, clock, small_fixture, tmp_path, capsys):
        t = referee.login("alpha", "pw-a")
        clock.advance(4.25)
        rows = oracle_rows(small_fixture).splitlines(keepends=True)
        referee.post_results(t, "".join(rows[::2]))
        clock.advance(30.5)
        referee.logout(t)
        online = referee.finalize(t)
        stem = next((tmp_path / "reports").glob("*.report")).with_suffix("")
        code, out, _ = run(["score", "--detections", f"{stem}.detections", "--manifest",
                            str(small_fixture.source), "--trace", f"{stem}.trace",
                            "--window", "0", repr(online.window_end_s), "--label", "alpha"], capsys)
        assert code == 0
        assert out == online.dumps()

    def test_missing_manifest_names_path(self, tmp_path, capsys):
        dets = tmp_path / "d.txt"
        dets.write_text("")
        missing = tmp_path / "nope" / "manifest.json"
        code, _, err = run(["score", "--detections", str(dets), "--manifest", str(missing),
                            "--energy-wh", "1"], capsys)
        assert code == 4 and str(missing) in err

    def test_bad_detection_row(self, small_fixture, tmp_path, capsys):
        dets = tmp_path / "d.txt"
        dets.write_text(oracle_rows(small_fixture) + "000000 1 2.0 0 0 1 1\n")
        code, _, err = run(["score", "--detections", str(dets), "--manifest",
                            str(small_fixture.source), "--energy-wh", "1"], capsys)
        assert code == 3 and f"{dets}:" in err

    def test_nonpositive_energy(self, small_fixture, tmp_path, capsys):
        dets = tmp_path / "d.txt"
        dets.write_text("")
        code, _, _ = run(["score", "--detections", str(dets), "--manifest",
                          str(small_fixture.source), "--energy-wh", "0"], capsys)
        assert code == 4

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["score", "--detections", "x"])
        assert exc.value.code == 2


class TestTrack1:
    def parse(self, out):
        return {k: float(v) for k, v in (l.split("=") for l in out.splitlines())}

    def test_validation_row(self, tmp_path, capsys):
        log = tmp_path / "t1.csv"
        rows = [f"{i},1,28.0,{int(i < 12941)}" for i in range(20000)]
        log.write_text("image_id,predicted_class,latency_ms,correct\n" + "\n".join(rows) + "\n")
        code, out, _ = run(["track1", "--log", str(log)], capsys)
        m = self.parse(out)
        assert code == 0 and m["num_classified"] == 20000
        assert m["accuracy_per_time"] == pytest.approx(1.08e-6, rel=0.01)

    def test_empty_log(self, tmp_path, capsys):
        log = tmp_path / "t1.csv"
        log.write_text("image_id,predicted_class,latency_ms,correct\n")
        code, out, _ = run(["track1", "--log", str(log)], capsys)
        m = self.parse(out)
        assert code == 0 and m["num_classified"] == 0 and m["accuracy_per_time"] == 0.0

    def test_bad_flag(self, tmp_path, capsys):
        log = tmp_path / "t1.csv"
        log.write_text("a,1,2.0,maybe\n")
        code, _, err = run(["track1", "--log", str(log)], capsys)
        assert code == 3 and f"{log}:1" in err


class TestFixtureAndDedup:
    def test_fixture(self, tmp_path, capsys):
        code, out, _ = run(["fixture", "--out", str(tmp_path / "fx"), "--images", "6",
                            "--classes", "3", "--size", "16x12"], capsys)
        assert code == 0 and out.startswith("wrote 6 images")
        doc = json.loads((tmp_path / "fx" / "manifest.json").read_text())
        assert len(doc["images"]) == 6

    def test_fixture_bad_size(self, tmp_path, capsys):
        code, _, _ = run(["fixture", "--out", str(tmp_path), "--size", "big"], capsys)
        assert code == 4

    def test_dedup_modes(self, small_fixture, tmp_path, capsys):
        other = tmp_path / "other"
        other.mkdir()
        first = small_fixture.images[0]
        (other / "copy.ppm").write_bytes(first.path.read_bytes())
        (other / "copy2.ppm").write_bytes(first.path.read_bytes())
        fresh = PixelMatrix.from_array(np.full((32, 32, 3), 7, "uint8"))
        (other / "flat.ppm").write_bytes(encode_pnm(fresh))

        _, out, _ = run(["dedup", str(other), "--against", str(small_fixture.source)], capsys)
        pairs = list(csv.reader(io.StringIO(out)))[1:]
        assert sorted(pairs) == [["copy.ppm", first.image_id], ["copy2.ppm", first.image_id]]

        _, out, _ = run(["dedup", str(other), "--against", str(small_fixture.source),
                         "--mode", "intra"], capsys)
        assert list(csv.reader(io.StringIO(out)))[1:] == [["copy.ppm", "copy2.ppm"]]

        _, out, _ = run(["dedup", str(other)], capsys)
        assert list(csv.reader(io.StringIO(out)))[1:] == [["copy.ppm", "copy2.ppm"]]


@pytest.mark.slow
def test_serve_persists_reports_on_sigterm(small_fixture, tmp_path):
    cfg = tmp_path / "comp.json"
    cfg.write_text(json.dumps({"manifest": str(small_fixture.source), "listen": "127.0.0.1:0",
                               "teams": {"alpha": "pw-a"}, "report_dir": "reports",
                               "meter": {"idle_watts": 6.0, "active_watts": 6.0}}))
    proc = subprocess.Popen([sys.executable, "-m", "energyref", "serve", "--config", str(cfg)],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        assert line.startswith("ready http://"), proc.stderr.read()
        c = RefereeClient(line.split()[1])
        c.login("alpha", "pw-a")
        c.request("POST", "/results", oracle_rows(small_fixture).encode(), "text/plain")
        c.close()
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(20) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
    reports = list((tmp_path / "reports").glob("*.report"))
    assert len(reports) == 1
    r = ScoreReport.loads(reports[0].read_text())
    assert r.map_value == 1.0 and r.label == "alpha"


def test_serve_bad_config(tmp_path, capsys):
    code, _, err = run(["serve", "--config", str(tmp_path / "missing.json")], capsys)
    assert code == 4 and "missing.json" in err
