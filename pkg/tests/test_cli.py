import csv
import json
from importlib import resources

import numpy as np
import pytest

from curesem.cli import main
from curesem.data import read_dataset
from curesem.simulation import SimDesign, solve_gamma

FAST = ["--iters", "40", "--burn-in", "10"]


def _design(name):
    return str(resources.files("curesem") / "designs" / name)


def _bundled():
    return str(resources.files("curesem") / "data" / "melanoma_like.csv")


def _table(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def _meta(path):
    return dict(l[2:].split(": ", 1) for l in path.read_text().splitlines() if l.startswith("# "))


@pytest.fixture(scope="module")
def gen_file(tmp_path_factory):
    cfg = tmp_path_factory.mktemp("cfg") / "design.json"
    cfg.write_text(json.dumps({"setting": 1, "cure": "low", "n": 200, "seed": 5}))
    out = cfg.parent / "sim.csv"
    assert main(["gen-data", str(cfg), "--out", str(out)]) == 0
    return out


def test_gen_data_writes_csv_and_sidecar(gen_file):
    data = read_dataset(gen_file)
    assert data.n == 200
    side = json.loads(gen_file.with_name(gen_file.name + ".truth.json").read_text())
    d = SimDesign.from_dict({"setting": 1, "cure": "low", "n": 200, "seed": 5})
    assert side["seed"] == 5
    np.testing.assert_allclose(side["gamma"], d.gammas())
    np.testing.assert_allclose(side["beta"], d.beta)
    assert _meta(gen_file)["seed"] == "5"


def test_gen_data_exponential_sidecar_gamma(tmp_path):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"cure": "low", "ew": {"alpha": 1, "k": 1, "lambda": 2.0}}))
    out = tmp_path / "e.csv"
    assert main(["gen-data", str(cfg), "--out", str(out)]) == 0
    side = json.loads((tmp_path / "e.csv.truth.json").read_text())
    for g, p, pi0 in zip(side["gamma"], side["design"]["censoring"], side["cure_rates"]):
        r = (p - pi0) / (1 - pi0)
        assert g == pytest.approx(r / (2.0 * (1 - r)), rel=1e-8)


def test_fit_both_engines_round_trip(gen_file, tmp_path):
    out = tmp_path / "fit"
    assert main(["fit", str(gen_file), "--engine", "both", "--alpha0", "2", "--out", str(out),
                 *FAST]) == 0
    for name in ["fit_em.csv", "fit_sem.csv", "sem_trace.csv", "em_trace.csv",
                 "survival_em.csv", "survival_sem.csv", "km.csv"]:
        meta = _meta(out / name)
        assert {"curesem_version", "seed", "config_hash"} <= set(meta), name
    header, rows = _table(out / "fit_sem.csv")
    assert header[:3] == ["quantity", "estimate", "se"]
    assert [r[0] for r in rows][:5] == ["beta0", "beta1", "alpha", "k", "lambda"]
    header, rows = _table(out / "sem_trace.csv")
    assert len(rows) == 40 and header[-1] == "loglik"


def test_fit_is_byte_identical_for_a_seed(gen_file, tmp_path):
    args = ["fit", str(gen_file), "--engine", "sem", "--seed", "9", *FAST]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "a2")]) == 0
    for name in ["fit_sem.csv", "sem_trace.csv", "survival_sem.csv"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "a2" / name).read_bytes()


def test_zero_censoring_engines_agree(tmp_path):
    from curesem.ew import EwParams, ew_sample

    t = ew_sample(np.random.default_rng(0), EwParams(2, 1.2, 1.0), 200)
    path = tmp_path / "nc.csv"
    path.write_text("time,delta,group\n" + "".join(f"{v},1,{1 + i % 4}\n" for i, v in enumerate(t)))
    out = tmp_path / "nc"
    assert main(["fit", str(path), "--c1", "0.3", "--c4", "0.1", "--out", str(out), *FAST]) == 0
    em = {r[0]: float(r[1]) for r in _table(out / "fit_em.csv")[1][:5]}
    sem = {r[0]: float(r[1]) for r in _table(out / "fit_sem.csv")[1][:5]}
    for name in em:
        assert sem[name] == pytest.approx(em[name], abs=1e-3), name


def test_fit_bad_input_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("time,delta,group\n1.0,3,1\n")
    assert main(["fit", str(bad), "--out", str(tmp_path)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["fit", str(tmp_path / "missing.csv")]) == 2
    nc = tmp_path / "nc.csv"
    nc.write_text("time,delta,group\n1,1,1\n2,1,2\n3,1,4\n")
    assert main(["fit", str(nc)]) == 2
    assert "--c1" in capsys.readouterr().err


def test_fit_divergence_exit_code(gen_file, tmp_path):
    out = tmp_path / "div"
    code = main(["fit", str(gen_file), "--engine", "em", "--max-iters", "1", "--out", str(out)])
    assert code == 3
    assert (out / "fit_em.csv").exists()
    assert "iteration limit" in _meta(out / "fit_em.csv")["status"]


def test_discriminate_on_bundled_data(tmp_path, capsys):
    out = tmp_path / "disc"
    assert main(["discriminate", _bundled(), "--out", str(out)]) == 0
    header, rows = _table(out / "discrimination.csv")
    assert [r[0] for r in rows] == ["EW", "Exponential", "Rayleigh", "Weibull", "GE", "BurrX"]
    ll = {r[0]: float(r[header.index("loglik")]) for r in rows}
    assert all(ll["EW"] >= v - 1e-6 for v in ll.values())
    assert "best by AIC:" in capsys.readouterr().out


def test_simulate_smoke(tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", _design("smoke.json"), "--out", str(out), *FAST]) == 0
    header, rows = _table(out / "study_main.csv")
    assert header[:3] == ["engine", "quantity", "truth"]
    assert len(rows) == 18
    assert _meta(out / "study_main.csv")["seed"] == "7"


def test_simulate_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n": 100, "censoring": [0.3, 0.4, 0.3, 0.2], "extra": 1}))
    assert main(["simulate", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "extra: unknown field" in err
    unsolvable = tmp_path / "u.json"
    unsolvable.write_text(json.dumps({"censoring": [0.3, 0.4, 0.3, 0.2]}))
    assert main(["simulate", str(unsolvable)]) == 2
    assert "must exceed the cure rate" in capsys.readouterr().err
    notjson = tmp_path / "x.json"
    notjson.write_text("{")
    assert main(["simulate", str(notjson)]) == 2
    assert main(["simulate", _design("table3.json"), "--iters", "10", "--burn-in", "10"]) == 2


def test_shipped_designs_validate():
    from curesem.simulation import load_design

    for name in ["table3.json", "initials.json", "outliers.json", "smoke.json",
                 "melanoma_like.json"]:
        load_design(_design(name))
    assert load_design(_design("outliers.json")).outliers.fraction == 0.05


def test_bundled_dataset_shape():
    d = read_dataset(_bundled())
    assert d.n == 417
    sizes = [int(np.sum(d.x[:, 0] == g)) for g in (1, 2, 3, 4)]
    assert sizes == [111, 137, 87, 82]
    assert 0.5 < np.mean(d.delta == 0) < 0.62
