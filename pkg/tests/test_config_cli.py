import csv
import io

import pytest

from fedncv.cli import CSV_COLUMNS, cmd_run, cmd_sweep, main
from fedncv.config import ConfigError, RunConfig, format_config, parse_config

SMALL = ["--clients", "4", "--rounds", "3"]


def _rows(path):
    body = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(body))))


def test_empty_config_is_defaults():
    assert parse_config("") == RunConfig()


def test_flag_beats_file_and_comments_are_ignored():
    cfg = parse_config("# header\nrounds = 50  # trailing\n\nseed=4\n", {"rounds": "10"})
    assert cfg.rounds == 10 and cfg.seed == 4


def test_beta_is_unconstrained():
    assert parse_config("beta = 1.5").beta == 1.5
    assert parse_config("beta = -0.5").beta == -0.5


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("speed = 3", "cfg.txt:1: unknown key 'speed'"),
        ("rounds = many", "cfg.txt:1: rounds"),
        ("\nalgorithm = sgd", "cfg.txt:2: algorithm"),
        ("clients = 0", "cfg.txt:1: clients"),
        ("gamma = nan", "cfg.txt:1: gamma"),
        ("no equals sign", "cfg.txt:1: expected key=value"),
    ],
)
def test_bad_config_names_line_and_key(text, fragment):
    with pytest.raises(ConfigError, match=fragment.replace("(", r"\(")):
        parse_config(text, source="cfg.txt")


def test_format_round_trips():
    cfg = RunConfig(algorithm="clientcv", gamma=1.25, resample=True)
    assert parse_config(format_config(cfg)) == cfg


def test_run_writes_schema(tmp_path):
    out = tmp_path / "m.csv"
    assert main(["run", *SMALL, "--out", str(out)]) == 0
    text = out.read_text()
    assert "# gamma=300.0" in text
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 4


def test_algorithms_share_rounds_but_not_alpha(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["run", *SMALL, "--algorithm", "fedavg", "--out", str(a)])
    main(["run", *SMALL, "--algorithm", "fedncv", "--out", str(b)])
    ra, rb = _rows(a), _rows(b)
    assert [r["round"] for r in ra] == [r["round"] for r in rb]
    assert [r["alpha_mean"] for r in ra] != [r["alpha_mean"] for r in rb]


def test_same_seed_twice_is_byte_identical(tmp_path, monkeypatch):
    blobs = []
    for k, workers in enumerate(("1", "1")):
        where = tmp_path / str(k)
        where.mkdir()
        monkeypatch.chdir(where)
        assert main(["run", *SMALL, "--workers", workers, "--out", "m.csv"]) == 0
        blobs.append((where / "m.csv").read_bytes())
    assert blobs[0] == blobs[1]


def test_config_file_and_exit_codes(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("rounds = 2\nclients = 3\n")
    out = tmp_path / "m.csv"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert len(_rows(out)) == 2
    assert main(["run", "--config", str(tmp_path / "missing.txt")]) == 1
    cfg.write_text("bogus = 1\n")
    assert main(["run", "--config", str(cfg)]) == 1
    with pytest.raises(SystemExit) as info:
        main(["run", "--clients", "lots"])
    assert info.value.code == 1


def test_divergence_exit_code_keeps_csv(tmp_path):
    out = tmp_path / "m.csv"
    assert main(["run", *SMALL, "--algorithm", "fedavg", "--gamma", "1e14", "--out", str(out)]) == 2
    assert out.exists()
    assert len(_rows(out)) < 3


def test_verify_identity_passes(capsys):
    assert main(["verify", "identity"]) == 0
    assert capsys.readouterr().out.count("PASS") == 4


def test_verify_failure_exit_code(monkeypatch):
    from fedncv import verify

    monkeypatch.setitem(verify.SUITES, "identity", lambda seed: [verify.Check("x", False, 1.0, 0.0)])
    assert main(["verify", "identity"]) == 3


def test_sweep_clients(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--rounds", "2", "--vary", "clients", "--values", "3,4", "--out", str(out)]) == 0
    assert (tmp_path / "s_clients-3.csv").exists() and (tmp_path / "s_clients-4.csv").exists()
    summary = _rows(tmp_path / "s_summary.csv")
    assert [r["clients"] for r in summary] == ["3", "4"]
    assert all(r["test_accuracy_std"] == "" for r in summary)


def test_sweep_seed_fills_std(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sweep", *SMALL, "--vary", "seed", "--values", "0,1,2,3,4", "--out", str(out)]) == 0
    summary = _rows(tmp_path / "s_summary.csv")
    assert len(summary) == 5
    assert all(r["test_accuracy_std"] != "" for r in summary)


def test_sweep_beta_one_collapses_with_equal_sizes(tmp_path):
    # a large concentration alone does not equalise shard sizes, so this goes
    # through cmd_sweep with two clients holding the same number of samples
    from fedncv.data import save_dataset, synth_gaussian_mixture

    path = tmp_path / "d.txt"
    save_dataset(synth_gaussian_mixture(2, 3, 5, 0.3, seed=0), path)
    cfg = RunConfig(clients=2, rounds=1, num_classes=2, input_dim=3, n_samples=5, dataset_path=str(path),
                    dirichlet_concentration=1.0, out_path=str(tmp_path / "b.csv"), alpha_mode="fixed")
    assert cmd_sweep(cfg, "beta", ["0", "0.5", "1"]) == 0
    summary = _rows(tmp_path / "b_summary.csv")
    assert float(summary[2]["global_grad_norm"]) == 0.0
    assert float(summary[0]["global_grad_norm"]) > 0.0


def test_sweep_rejects_non_numeric_key(tmp_path):
    assert main(["sweep", "--vary", "algorithm", "--values", "fedavg", "--out", str(tmp_path / "x.csv")]) == 1


def test_cmd_run_returns_zero(tmp_path):
    assert cmd_run(RunConfig(rounds=1, clients=3, out_path=str(tmp_path / "m.csv"))) == 0
