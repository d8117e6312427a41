import json

import numpy as np
import pytest

from fedcada.cli import main
from fedcada.experiment import (
    read_cka_csv,
    read_curves_csv,
    read_partition_csv,
    read_rounds_csv,
)

TINY = """
fed.rounds = 4
fed.num_clients = 4
fed.batch_size = 16
data.classes = 5
data.dim = 8
data.per_class = 40
model.hidden1 = 16
model.hidden2 = 16
cka.interval = 2
"""


def write_config(tmp_path, text=TINY, name="exp.conf"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_run_writes_all_outputs(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_rounds_csv(out / "rounds.csv")
    assert [r["round"] for r in rows] == [1, 2, 3, 4]

    progress = [line for line in capsys.readouterr().err.splitlines() if "[round" in line]
    assert len(progress) == 4  # one progress line per round on stderr

    summary = json.loads((out / "summary.json").read_text())
    assert summary["best_acc"] == max(r["test_acc"] for r in rows)
    assert summary["final_acc"] == rows[-1]["test_acc"]
    assert summary["config"]["rounds"] == 4

    matrix = read_cka_csv(out / "cka_m.csv")
    assert matrix.shape == (4, 4)
    assert np.all(np.diag(matrix) == 1.0)


def test_zero_rounds_writes_header_only(tmp_path):
    cfg = write_config(tmp_path, "fed.rounds = 0\n")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "rounds.csv").read_text() == "round,train_loss,test_loss,test_acc\n"
    assert read_rounds_csv(out / "rounds.csv") == []


def test_same_seed_runs_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(b)]) == 0
    assert (a / "rounds.csv").read_bytes() == (b / "rounds.csv").read_bytes()
    assert (a / "cka_m.csv").read_bytes() == (b / "cka_m.csv").read_bytes()


def test_workers_flag_keeps_output_identical(tmp_path):
    cfg = write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(b), "--workers", "4"]) == 0
    assert (a / "rounds.csv").read_bytes() == (b / "rounds.csv").read_bytes()


def test_seed_override_changes_results(tmp_path):
    cfg = write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(b), "--seed", "99"]) == 0
    assert (a / "rounds.csv").read_bytes() != (b / "rounds.csv").read_bytes()
    assert json.loads((b / "summary.json").read_text())["seed"] == 99


def test_config_error_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, "optim.beta1 = 2\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "optim.beta1" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    assert main(["run", "--config", str(tmp_path / "absent.conf")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_3_after_flushing(tmp_path, capsys):
    # SGD with an absurd learning rate overflows within a few rounds
    cfg = write_config(
        tmp_path,
        "strategy = fedavg\noptim.eta_l = 1e30\nfed.rounds = 8\nfed.num_clients = 2\n"
        "data.classes = 4\ndata.dim = 6\ndata.per_class = 30\n"
        "model.hidden1 = 8\nmodel.hidden2 = 8\n",
    )
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 3
    assert "diverged" in capsys.readouterr().err
    rows = (out / "rounds.csv").read_text().splitlines()
    assert rows[0] == "round,train_loss,test_loss,test_acc"
    assert len(rows) >= 2  # at least one round flushed before the failure


def test_env_var_default_out_dir(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, "fed.rounds = 0\n")
    monkeypatch.setenv("FEDCADA_OUT", str(tmp_path / "envout"))
    monkeypatch.chdir(tmp_path)
    assert main(["run", "--config", str(cfg)]) == 0
    assert (tmp_path / "envout" / "rounds.csv").exists()


def test_partition_command(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "p"
    assert main(["partition", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_partition_csv(out / "partition.csv")
    assert sum(r["count"] for r in rows) == 5 * 40
    assert {r["client"] for r in rows} == {0, 1, 2, 3}


def test_partition_iid_is_even(tmp_path):
    cfg = write_config(
        tmp_path,
        "data.partition = iid\nfed.num_clients = 4\ndata.classes = 4\n"
        "data.per_class = 40\ndata.dim = 6\n",
    )
    out = tmp_path / "p"
    assert main(["partition", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_partition_csv(out / "partition.csv")
    totals = {}
    for r in rows:
        totals[r["client"]] = totals.get(r["client"], 0) + r["count"]
    assert max(totals.values()) - min(totals.values()) <= 1


def test_partition_alpha_controls_entropy(tmp_path):
    def mean_entropy(alpha, out):
        cfg = write_config(
            tmp_path,
            f"data.alpha = {alpha}\nfed.num_clients = 5\ndata.classes = 10\n"
            "data.per_class = 200\ndata.dim = 4\n",
            name=f"a{alpha}.conf",
        )
        assert main(["partition", "--config", str(cfg), "--out", str(out)]) == 0
        rows = read_partition_csv(out / "partition.csv")
        by_client = {}
        for r in rows:
            by_client.setdefault(r["client"], []).append(r["count"])
        entropies = []
        for counts in by_client.values():
            p = np.array(counts, dtype=float)
            p = p[p > 0] / p.sum()
            entropies.append(float(-(p * np.log(p)).sum()))
        return np.mean(entropies)

    low = mean_entropy(0.1, tmp_path / "low")
    high = mean_entropy(100, tmp_path / "high")
    assert high > low


def test_curves_command_values(tmp_path):
    out = tmp_path / "c"
    assert main(["curves", "--beta", "0.9", "--rounds", "200", "--out", str(out)]) == 0
    rows = read_curves_csv(out / "curves.csv")
    assert len(rows) == 200
    first = rows[0]
    assert first["add_geometric"] == pytest.approx(1.9, abs=1e-12)
    assert first["add_sine"] == pytest.approx(1.7833269, abs=5e-8)
    geometric = [r["add_geometric"] for r in rows]
    vanilla = [r["vanilla"] for r in rows]
    assert all(b < a for a, b in zip(geometric, geometric[1:]))
    assert all(b > a for a, b in zip(vanilla, vanilla[1:]))
    assert geometric[-1] > 1.0 and vanilla[-1] < 1.0


def test_curves_bad_beta_exits_2(tmp_path):
    assert main(["curves", "--beta", "1.5", "--rounds", "10", "--out", str(tmp_path)]) == 2
    assert main(["curves", "--beta", "0.9", "--rounds", "0", "--out", str(tmp_path)]) == 2


def test_no_partial_files_on_success(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert not list(out.glob("*.tmp"))
