import csv
import json
import math

import yaml

from srdetect.cli import config_hash, main
from srdetect.quasistationary import DiscretizedDistribution

BASE = {
    "model": {"name": "gaussian", "mu0": 0.0, "mu1": 1.0},
    "seed": 7,
    "replications": 4000,
    "constants_replications": 20_000,
}


def write_cfg(tmp_path, **kw):
    cfg = dict(BASE, **kw)
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def tree_bytes(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_simulate_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, procedures=["sr"], simulate={"nu": 50, "runs": 3})
    for out in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--threshold", "100", "--out", str(tmp_path / out)]) == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a == b and "trajectory_sr_0.csv" in a
    text = a["trajectory_sr_0.csv"].decode()
    assert text.startswith("# srdetect ") and "config_hash=" in text and "# seed=7" in text
    rows = read_rows(tmp_path / "a" / "trajectory_sr_0.csv")
    assert rows[-1]["alarm"] == "1" and float(rows[-1]["statistic"]) >= 100


def test_seed_changes_output(tmp_path):
    cfg = write_cfg(tmp_path, procedures=["sr"], simulate={"nu": 50, "runs": 1})
    main(["simulate", "--config", cfg, "--threshold", "100", "--out", str(tmp_path / "a")])
    main(["simulate", "--config", cfg, "--threshold", "100", "--seed", "8", "--out", str(tmp_path / "b")])
    assert tree_bytes(tmp_path / "a") != tree_bytes(tmp_path / "b")


def test_censored_flag(tmp_path):
    cfg = write_cfg(tmp_path, procedures=["sr"], simulate={"nu": "inf", "runs": 1, "cap": 200})
    assert main(["simulate", "--config", cfg, "--threshold", "1e9", "--out", str(tmp_path / "o")]) == 0
    summary = read_rows(tmp_path / "o" / "simulate_summary.csv")
    assert summary[0]["censored"] == "1" and summary[0]["observed"] == "200"
    assert "# censored=1" in (tmp_path / "o" / "trajectory_sr_0.csv").read_text()


def test_config_errors(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["simulate", "--config", cfg, "--threshold", "10", "--procedures", "glr",
                 "--out", str(tmp_path)]) == 2
    assert "unknown procedure" in capsys.readouterr().err
    p = tmp_path / "noseed.yaml"
    p.write_text(yaml.safe_dump({"model": BASE["model"]}))
    assert main(["evaluate", "--config", str(p), "--threshold", "10", "--out", str(tmp_path)]) == 2
    assert "seed" in capsys.readouterr().err
    assert main(["evaluate", "--config", cfg, "--threshold", "10", "--criteria", "lorden",
                 "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump(dict(BASE, model={"name": "cauchy"})))
    assert main(["evaluate", "--config", str(bad), "--threshold", "10", "--out", str(tmp_path)]) == 2


def test_evaluate_rows_and_reproducibility(tmp_path):
    cfg = write_cfg(tmp_path, procedures=["sr"], criteria=["arl", "sadd", "riadd", "stadd"], gamma=100,
                    replications=20_000)
    for out in ("a", "b"):
        assert main(["evaluate", "--config", cfg, "--out", str(tmp_path / out)]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    rows = read_rows(tmp_path / "a" / "evaluate.csv")
    assert [r["criterion"] for r in rows] == ["arl", "sadd", "riadd", "stadd"]
    assert all(r["status"] == "ok" and float(r["std_error"]) > 0 for r in rows)
    by = {r["criterion"]: r for r in rows}
    diff = abs(float(by["riadd"]["estimate"]) - float(by["stadd"]["estimate"]))
    assert diff <= 3 * math.hypot(float(by["riadd"]["std_error"]), float(by["stadd"]["std_error"]))
    assert (tmp_path / "a" / "delay_curve_sr.csv").exists()


def test_evaluate_row_level_failure(tmp_path):
    cfg = write_cfg(tmp_path, procedures=["cusum"], criteria=["arl", "jb"], threshold=20)
    assert main(["evaluate", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    rows = read_rows(tmp_path / "o" / "evaluate.csv")
    assert rows[0]["status"] == "ok" and rows[1]["status"].startswith("error")


def test_compare_self_is_identical(tmp_path):
    cfg = write_cfg(tmp_path, procedures=["sr", "sr"], threshold=50)
    assert main(["compare", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = read_rows(tmp_path / "o" / "compare.csv")
    strip = lambda r: {k: v for k, v in r.items() if k != "rank"}
    assert strip(rows[0]) == strip(rows[1])


def test_compare_matched_arl(tmp_path):
    cfg = write_cfg(tmp_path, procedures=["sr", "sr_r:star", "srp", "cusum"], gamma=100,
                    replications=20_000)
    assert main(["compare", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = {r["procedure"]: r for r in read_rows(tmp_path / "o" / "compare.csv")}
    assert set(rows) == {"sr", "sr_r(star)", "srp", "cusum"}
    for r in rows.values():
        assert abs(float(r["arl"]) - 100) / 100 < 0.05
    f = lambda name, key: float(rows[name][key])
    # SR-r near r* against SRP: soft comparison
    assert f("sr_r(star)", "sadd") <= f("srp", "sadd") + 3 * math.hypot(f("sr_r(star)", "sadd_se"),
                                                                        f("srp", "sadd_se"))
    # CUSUM respects the lower bound built from SR-r* runs
    assert f("cusum", "sadd") >= f("sr_r(star)", "jb") - 3 * math.hypot(f("cusum", "sadd_se"),
                                                                         f("sr_r(star)", "jb_se"))


def test_compare_needs_two(tmp_path):
    cfg = write_cfg(tmp_path, procedures=["sr"], threshold=50)
    assert main(["compare", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_calibrate(tmp_path):
    cfg = write_cfg(tmp_path, procedures=["sr", "cusum"], gamma=100, replications=10_000)
    assert main(["calibrate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = read_rows(tmp_path / "o" / "calibration.csv")
    assert [r["procedure"] for r in rows] == ["sr", "cusum"]
    assert all(abs(float(r["arl"]) - 100) <= 2 for r in rows)


def test_constants_json_and_cache(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["constants", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    cache = list((tmp_path / "a" / "cache").glob("constants_*.json"))
    assert len(cache) == 1
    first = (tmp_path / "a" / "constants.json").read_bytes()
    # second call reads the cache and must write the same document
    assert main(["constants", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert (tmp_path / "a" / "constants.json").read_bytes() == first
    assert main(["constants", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "constants.json").read_bytes() == first
    doc = json.loads(first)
    for key in ("model", "kappa", "kappa_se", "zeta", "zeta_se", "I", "C_inf", "C_inf_se", "C_r", "r_star"):
        assert key in doc
    assert doc["header"][0].startswith("srdetect")
    assert 0 < doc["zeta"] < 1 and doc["r_star"] > 0


def test_constants_arithmetic_model_fails(tmp_path, capsys):
    p = tmp_path / "b.yaml"
    p.write_text(yaml.safe_dump(dict(BASE, model={"name": "bernoulli", "q0": 0.2, "q1": 0.4})))
    assert main(["constants", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "arithmetic" in capsys.readouterr().err


def test_qsd_export(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["qsd", "--config", cfg, "--threshold", "50", "--out", str(tmp_path / "o")]) == 0
    d = DiscretizedDistribution.from_csv(tmp_path / "o" / "quasi-stationary.csv")
    assert d.threshold == 50.0 and abs(d.masses.sum() - 1) < 1e-12
    assert main(["qsd", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_config_hash_ignores_output_location():
    a = dict(BASE, out="x")
    b = dict(BASE, out="y", workers=4)
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(dict(a, seed=8))
