import csv
import io
import json
from fractions import Fraction

import mpmath
import pytest

from chaostat.cli import main, parse_targets, read_config_file

mpmath.mp.prec = 160


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def csv_rows(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.reader(io.StringIO("\n".join(lines))))


def test_iterate_rows(capsys):
    code, out, _ = run(capsys, "iterate", "--a", "4", "--x", "0.5", "--n", "4", "--format", "csv")
    assert code == 0
    rows = csv_rows(out)
    assert rows[0] == ["index", "value"]
    assert [r[1] for r in rows[1:]] == ["0.5", "1", "0", "0"]


def test_iterate_converges(capsys):
    code, out, _ = run(capsys, "iterate", "--a", "2.5", "--x", "0.2", "--n", "100")
    assert code == 0
    rows = json.loads(out)["rows"]
    assert len(rows) == 100
    assert abs(float(rows[-1]["value"]) - 0.6) < 1e-6


def test_iterate_bad_parameter(capsys):
    code, _, err = run(capsys, "iterate", "--a", "5", "--x", "0.5", "--n", "3")
    assert code == 2
    assert "(0, 4]" in err


def test_usage_errors(capsys):
    assert run(capsys, "iterate", "--a", "3")[0] == 2
    assert run(capsys, "iterate", "--a", "3", "--x", "0.2", "--n", "2", "--precision", "10")[0] == 2
    assert run(capsys, "find", "parabolic")[0] == 2


def test_csv_embeds_config(capsys):
    _, out, _ = run(capsys, "iterate", "--a", "3", "--x", "0.2", "--n", "2", "--format", "csv", "--seed", "4")
    first = out.splitlines()[0]
    assert first.startswith("# config: ")
    cfg = json.loads(first[len("# config: "):])
    assert cfg["seed"] == 4 and cfg["extra"]["a"] == "3"


def test_measure_montecarlo_w1(capsys):
    code, out, _ = run(capsys, "measure", "--a", "2.5", "--k", "50", "--n", "2000", "--w1-point", "0.6")
    assert code == 0
    doc = json.loads(out)
    assert float(doc["w1_to_point"]) < 1e-3
    assert sum(Fraction(h["mass"]) for h in doc["histogram"]) == 1


@pytest.mark.parametrize("fmt", ["json", "csv"])
def test_measure_byte_identical(tmp_path, capsys, fmt):
    # same path both times: the output path is part of the echoed config
    p = tmp_path / f"m.{fmt}"
    blobs = []
    for _ in range(2):
        code, _, _ = run(capsys, "measure", "--a", "3.7", "--k", "5", "--n", "50", "--seed", "11",
                         "--format", fmt, "--out", str(p))
        assert code == 0
        blobs.append(p.read_bytes())
    assert blobs[0] == blobs[1]


def test_measure_birkhoff_needs_x(capsys):
    assert run(capsys, "measure", "--a", "3", "--mode", "birkhoff")[0] == 2


def test_w1_between_files(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p, x in ((a, "0.2"), (b, "0.7")):
        run(capsys, "measure", "--a", "2.5", "--mode", "birkhoff", "--x", x, "--n", "1", "--out", str(p))
    # measure files embed a config block; the w1 command reads the measure field
    for p in (a, b):
        doc = json.loads(p.read_text())
        p.write_text(json.dumps(doc["measure"]))
    code, out, _ = run(capsys, "w1", "--mu", str(a), "--nu", str(b))
    assert code == 0
    assert abs(mpmath.mpf(json.loads(out)["w1"]) - mpmath.mpf("0.5")) < 1e-30


def test_orbits_words(capsys):
    code, out, _ = run(capsys, "orbits", "--a", "3.95", "--N", "5")
    assert code == 0
    orbits = json.loads(out)["orbits"]
    assert [o["word"] for o in orbits] == ["1", "0", "10", "110", "100"]
    assert all(mpmath.mpf(o["residual"]) < mpmath.mpf(2) ** -80 for o in orbits)


def test_orbits_csv_columns(capsys):
    _, out, _ = run(capsys, "orbits", "--a", "3.95", "--N", "2", "--format", "csv")
    assert csv_rows(out)[0] == ["index", "word", "k_n", "points", "residual"]


def test_orbits_below_threshold(capsys):
    code, _, err = run(capsys, "orbits", "--a", "3.5")
    assert code == 3
    assert "(c, 4]" in err


def test_find_c(capsys):
    code, out, _ = run(capsys, "find", "c")
    assert code == 0
    c = float(json.loads(out)["result"]["c"])
    assert 3.85 < c < 4


def test_find_superattracting_two(capsys):
    _, out, _ = run(capsys, "find", "superattracting", "--period", "2")
    a = mpmath.mpf(json.loads(out)["result"]["a"])
    assert abs(a - (1 + mpmath.sqrt(5))) < 1e-10


def test_find_parabolic_three(capsys):
    code, out, _ = run(capsys, "find", "parabolic", "--period", "3")
    assert code == 0
    a = mpmath.mpf(json.loads(out)["result"]["a"])
    assert abs(a - (1 + 2 * mpmath.sqrt(2))) < 1e-10


def test_steer_empty_targets(capsys):
    code, out, _ = run(capsys, "steer", "--targets", "", "--samples", "0")
    assert code == 0
    rec = json.loads(out)["record"]
    assert rec["m"] == 1


def test_halting_demo_needs_stages(capsys):
    assert run(capsys, "halting-demo", "--K", "0")[0] == 2


@pytest.mark.parametrize("spec, weights, tail", [
    ("1", [1], 0),
    ("1/2,1/2", [Fraction(1, 2)] * 2, 0),
    ("1/2;1/2", [Fraction(1, 2)], Fraction(1, 2)),
])
def test_parse_targets(spec, weights, tail):
    tw = parse_targets(spec)
    assert list(tw.weights) == weights and tw.tail_bound == tail


def test_config_file_overridden_by_flags(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nprecision = 200\nseed=3\nformat=csv\n")
    assert read_config_file(str(cfg)) == {"precision": "200", "seed": "3", "format": "csv"}
    _, out, _ = run(capsys, "iterate", "--a", "3", "--x", "0.2", "--n", "2", "--config", str(cfg),
                    "--format", "json")
    got = json.loads(out)["config"]
    assert got["precision"] == 200 and got["seed"] == 3 and got["format"] == "json"


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour=blue\n")
    assert run(capsys, "iterate", "--a", "3", "--x", "0.2", "--n", "2", "--config", str(cfg))[0] == 2
