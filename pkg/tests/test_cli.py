import numpy as np
import pytest

from metainsert.cli import cli_dispatch
from metainsert.grasp import shift_image, textured_image, write_pgm

MICRO_TRAIN = """
latent_dim = 3
num_tasks = 2
iterations = 2
steps_per_iter = 2
meta_batch = 2
k_collect = 1
context_batch = 16
hidden_dims = 8,8
batch_size = 8
"""

MICRO_SAC = """
hidden_dims = 8,8
batch_size = 8
"""


@pytest.fixture
def micro_ckpt(tmp_path):
    cfg = tmp_path / "train.cfg"
    cfg.write_text(MICRO_TRAIN)
    out = tmp_path / "run"
    code = cli_dispatch(["train", "--family", "plug", "--config", str(cfg),
                         "--seed", "7", "--out", str(out)])
    assert code == 0
    return out / "checkpoint.json"


def test_unknown_subcommand_exits_nonzero(capsys):
    code = cli_dispatch(["frobnicate"])
    assert code != 0
    assert "usage" in capsys.readouterr().err.lower()


def test_no_arguments_prints_usage(capsys):
    assert cli_dispatch([]) != 0


def test_bench_single_row_smoke(tmp_path, capsys):
    out = tmp_path / "row.csv"
    code = cli_dispatch(["bench", "--suite", "plug0", "--policy", "spiral",
                         "--draws", "2", "--episodes", "1",
                         "--seed", "0", "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 2  # header + one row
    assert lines[1].startswith("spiral,plug,0.0,2,")


def test_eval_unknown_suite_diagnostic(capsys):
    code = cli_dispatch(["eval", "--policy", "spiral", "--suite", "plugX",
                         "--seed", "0"])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_seed_reproducibility_eval(tmp_path):
    def run(name):
        out = tmp_path / name
        assert cli_dispatch(["eval", "--policy", "random", "--suite", "plug2",
                             "--draws", "3", "--episodes", "2", "--seed", "7",
                             "--out", str(out)]) == 0
        return out.read_bytes()

    assert run("a.csv") == run("b.csv")


def test_train_checkpoint_byte_identical(tmp_path):
    cfg = tmp_path / "t.cfg"
    cfg.write_text(MICRO_TRAIN)

    def run(name):
        out = tmp_path / name
        assert cli_dispatch(["train", "--family", "plug", "--config", str(cfg),
                             "--seed", "7", "--out", str(out)]) == 0
        return ((out / "checkpoint.json").read_bytes(),
                (out / "train_log.csv").read_bytes())

    assert run("r1") == run("r2")


def test_adapt_log_deterministic(tmp_path, micro_ckpt):
    def run(name):
        out = tmp_path / name
        assert cli_dispatch(["adapt", "--ckpt", str(micro_ckpt), "--family",
                             "plug", "--task-seed", "5", "--trials", "3",
                             "--seed", "2", "--out", str(out)]) == 0
        return out.read_bytes()

    first = run("a1.csv")
    assert first == run("a2.csv")
    header = first.decode().splitlines()[0]
    assert header.startswith("trial_index,success,insertion_steps,")


def test_eval_pearl_checkpoint_roundtrip(tmp_path, micro_ckpt):
    out = tmp_path / "pearl.csv"
    code = cli_dispatch(["eval", "--policy", "pearl", "--ckpt", str(micro_ckpt),
                         "--suite", "plug0", "--draws", "2", "--episodes", "1",
                         "--adapt-trials", "2", "--seed", "1",
                         "--out", str(out)])
    assert code == 0
    assert out.read_text().splitlines()[1].startswith("pearl,plug,0.0,2,")


def test_family_config_file_accepted(tmp_path, micro_ckpt):
    from metainsert.env import PLUG

    fam_file = tmp_path / "family.cfg"
    PLUG.save(fam_file)
    out = tmp_path / "adapt.csv"
    code = cli_dispatch(["adapt", "--ckpt", str(micro_ckpt), "--family",
                         str(fam_file), "--task-seed", "1", "--trials", "2",
                         "--seed", "0", "--out", str(out)])
    assert code == 0
    assert out.exists()


def test_grasp_correct_output_format(tmp_path, capsys):
    rng = np.random.default_rng(0)
    ref = textured_image(rng, 32, 32)
    qry = shift_image(ref, 3, -2)
    ref_path = tmp_path / "ref.pgm"
    qry_path = tmp_path / "qry.pgm"
    write_pgm(ref, ref_path, binary=True)
    write_pgm(qry, qry_path, binary=True)
    code = cli_dispatch(["grasp-correct", "--ref", str(ref_path), "--img",
                         str(qry_path), "--mm-per-px", "0.25"])
    assert code == 0
    fields = capsys.readouterr().out.strip().split()
    assert len(fields) == 5
    assert int(fields[0]) == 3
    assert int(fields[1]) == -2
    assert float(fields[2]) == pytest.approx(0.75)
    assert float(fields[3]) == pytest.approx(-0.5)
    assert 0.0 < float(fields[4]) <= 1.0


def test_grad_check_passes(tmp_path, capsys):
    out = tmp_path / "grad.txt"
    code = cli_dispatch(["grad-check", "--seed", "0", "--out", str(out)])
    assert code == 0
    text = out.read_text()
    assert "PASS" in text and "FAIL" not in text


def test_sac_train_micro_deterministic(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text(MICRO_SAC)

    def run(name):
        out = tmp_path / name
        assert cli_dispatch(["sac-train", "--family", "plug", "--config",
                             str(cfg), "--budget", "600", "--warmup", "2",
                             "--seed", "3", "--out", str(out)]) == 0
        return (out / "checkpoint.json").read_bytes()

    assert run("s1") == run("s2")
