import json
import subprocess
import sys

import pytest

from leitnerq.cli import main
from leitnerq.logs import write_logs
from leitnerq.synth import generate_logs


@pytest.fixture
def logs_csv(tmp_path):
    path = tmp_path / "logs.csv"
    with open(path, "w") as fh:
        write_logs(generate_logs(40, 10, 5, 0.1, seed=0).logs, fh)
    return path


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_ingest_and_eval(tmp_path, logs_csv, capsys):
    hist = tmp_path / "h.json"
    code, out, _ = run(["ingest", "--logs", logs_csv, "--out", hist, "--min-interactions", "5"], capsys)
    assert code == 0
    summary = json.loads(out)
    assert summary["interactions"] == 2000 and 0 < summary["recall_rate"] < 1
    assert (tmp_path / "h.json.manifest.json").exists()

    rep = tmp_path / "r.csv"
    code, _, err = run(["eval", "--histories", hist, "--models", "3,5,8,13", "--folds", "3",
                        "--seed", "1", "--out", rep], capsys)
    assert code == 0
    rows = rep.read_text().splitlines()
    assert rows[0] == "model,fold,bin,auc"
    assert {r.split(",")[0] for r in rows[1:]} == {"irt1", "efc_global_n", "efc_global_q", "efc_item_q"}

    code, _, err = run(["eval", "--histories", hist, "--models", "8,8", "--folds", "3",
                        "--out", tmp_path / "r.json"], capsys)
    assert code == 0 and "duplicate" in err
    assert json.loads((tmp_path / "r.json").read_text())["models"] == ["efc_global_q"]


def test_fit_writes_models(tmp_path, logs_csv, capsys):
    hist = tmp_path / "h.json"
    run(["ingest", "--logs", logs_csv, "--out", hist], capsys)
    code, _, err = run(["fit", "--histories", hist, "--models", "efc_global_q,4", "--out", tmp_path / "m.json"],
                       capsys)
    assert code == 0 and "theta=" in err
    models = json.loads((tmp_path / "m.json").read_text())["models"]
    assert [m["row"] for m in models] == [8, 4]
    assert models[0]["time_unit"] == "days"


def test_errors_exit_one(tmp_path, capsys):
    code, _, err = run(["ingest", "--logs", tmp_path / "missing.csv"], capsys)
    assert code == 1 and "error" in err
    bad = tmp_path / "bad.csv"
    bad.write_text("user_id,item_id,timestamp,grade\nu,i,0,9\n")
    code, _, err = run(["ingest", "--logs", bad], capsys)
    assert code == 1 and "line 2" in err
    hist = tmp_path / "h.json"
    hist.write_text('{"histories": []}')
    code, _, err = run(["eval", "--histories", hist, "--models", "bogus"], capsys)
    assert code == 1 and "efc_item_q_nodelay" in err
    code, _, err = run(["sweep", "--config", "nope.json"], capsys)
    assert code == 1 and "fig3.json" in err


def test_sweep_bundled_and_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert run(["sweep", "--config", "fig3", "--trials", "1", "--seed", "7", "--out", out], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.occupancy.csv").exists()
    lines = a.read_text().splitlines()
    assert len(lines) == 13
    manifest = json.loads((tmp_path / "a.csv.manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["config"]["U"] == 0.1902


def test_sweep_zero_rate_and_skips(tmp_path, capsys):
    out = tmp_path / "z.csv"
    assert run(["sweep", "--config", "fig3", "--rates", "0", "--trials", "2", "--out", out], capsys)[0] == 0
    rows = out.read_text().splitlines()
    assert len(rows) == 2 and rows[1].startswith("0.0,0.0,0.0")
    code, _, err = run(["sweep", "--config", "fig4", "--rates", "0.01,0.05", "--trials", "2",
                        "--out", tmp_path / "m.csv"], capsys)
    assert code == 0 and "skipped lambda_ext=0.05" in err


def test_seed_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("LQN_SEED", "11")
    out = tmp_path / "t.csv"
    assert run(["simulate", "--config", "fig3", "--lambda-ext", "0.01", "--out", out], capsys)[0] == 0
    assert json.loads((tmp_path / "t.csv.manifest.json").read_text())["seed"] == 11
    assert out.read_text().splitlines()[0] == "time,action,item_id,deck,outcome,q_after"


def test_replay_reproduces_output(tmp_path, capsys):
    out = tmp_path / "s.csv"
    run(["sweep", "--config", "fig3", "--rates", "0.01,0.02", "--trials", "3", "--out", out], capsys)
    again = tmp_path / "again.csv"
    assert run(["replay", "--manifest", tmp_path / "s.csv.manifest.json", "--out", again], capsys)[0] == 0
    assert again.read_bytes() == out.read_bytes()


def test_plan_commands(tmp_path, capsys):
    out = tmp_path / "p.json"
    code, _, err = run(["plan", "--decks", "1", "--budget", "1", "--theta", "1e-6", "--out", out], capsys)
    assert code == 0
    plan = json.loads(out.read_text())
    assert plan["schedule"]["lambda_ext"] == pytest.approx(0.5, abs=1e-3)
    assert plan["schedule"]["mu"][0] == pytest.approx(0.5, abs=1e-3)
    assert "deck" in err

    single = tmp_path / "one.json"
    multi = tmp_path / "multi.json"
    run(["plan", "--decks", "5", "--budget", "0.5", "--theta", "0.01", "--out", single], capsys)
    run(["plan-multi", "--decks", "5", "--budget", "0.5", "--thetas", "0.01", "--out", multi], capsys)
    s = json.loads(single.read_text())
    m = json.loads(multi.read_text())
    assert m["bins"][0]["schedule"] == s["schedule"]

    code, _, err = run(["plan", "--decks", "5", "--budget", "0.1902", "--theta", "0.0077",
                        "--lambda-ext", "0.03", "--mu-rule", "inverse_sqrt"], capsys)
    assert code == 1 and "starved" in err

    csv_out = tmp_path / "s9.csv"
    assert run(["plan", "--config", "fig9", "--out", csv_out], capsys)[0] == 0
    assert csv_out.read_text().splitlines()[0] == "U,lambda_star,mu_1,mu_2,mu_3,mu_4,mu_5"


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "leitnerq", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "leitnerq" in r.stdout
