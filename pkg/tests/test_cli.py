import json
import os
import shutil
import subprocess

import pytest

from rb_operon.cli import _parse_value, main

TINY = ["--set", f"h={1 / 12}", "--set", "n_pool=24", "--set", "n_train=16",
        "--set", "n_val=8", "--set", "n_test=8",
        "--set", "greedy_fixed_n=2", "--set", "pod_fixed_n=2"]


def test_parse_value():
    assert _parse_value("3") == 3 and isinstance(_parse_value("3"), int)
    assert _parse_value("0.5") == 0.5
    assert _parse_value("1e-7") == 1e-7
    assert _parse_value("true") is True
    assert _parse_value("False") is False
    assert _parse_value("none") is None
    assert _parse_value("inclusion") == "inclusion"


def test_mesh_then_assemble_reuses_written_mesh(tmp_path, capsys):
    out = str(tmp_path / "run")
    assert main(["mesh", "--example", "1", "--out", out] + TINY) == 0
    assert os.path.exists(os.path.join(out, "mesh.txt"))
    line = capsys.readouterr().out
    assert "nodes" in line and "min angle" in line

    # assemble must read the staged mesh back instead of remeshing
    assert main(["assemble", "--example", "1", "--out", out] + TINY) == 0
    assert os.path.exists(os.path.join(out, "a_star.txt"))
    assert os.path.exists(os.path.join(out, "mass.txt"))
    info = json.load(open(os.path.join(out, "assemble.json")))
    assert info["n_free"] + info["n_dirichlet"] == info["n_nodes"]
    assert info["alpha_lb"] > 0


def test_modes_requires_example2(tmp_path, capsys):
    out = str(tmp_path / "run")
    assert main(["modes", "--example", "1", "--out", out]) == 2
    assert "invalid configuration" in capsys.readouterr().err


def test_eim_build(tmp_path, capsys):
    out = str(tmp_path / "run")
    assert main(["eim-build", "--example", "1", "--out", out]) == 2
    capsys.readouterr()
    args = ["eim-build", "--example", "3", "--out", out,
            "--set", f"h={1 / 12}", "--set", "eim_q=6", "--set", "eim_train=32"]
    assert main(args) == 0
    assert os.path.exists(os.path.join(out, "eim_basis.arr"))
    assert "rank" in capsys.readouterr().out


@pytest.fixture(scope="module")
def cli_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("cli") / "run")
    code = main(["rb-build", "--example", "1", "--out", out] + TINY)
    assert code == 0
    code = main(["train", "--out", out, "--set", "epochs=3",
                 "--set", "early_stop=5"])
    assert code == 0
    return out


def test_rb_build_artifacts(cli_dir):
    for name in ("manifest.json", "greedy_psi.arr", "pod_psi.arr",
                 "rb_params.arr", "rb_net.json", "greedy_decay.svg"):
        assert os.path.exists(os.path.join(cli_dir, name)), name


def test_config_file_and_set_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"h": 1 / 12, "n_pool": 24}))
    out = str(tmp_path / "run")
    # --set n=... would be rejected for example 1, so key checking is live
    code = main(["mesh", "--example", "1", "--out", out, "--config", str(cfg)])
    assert code == 0
    n_nodes = int(capsys.readouterr().out.split()[1])
    # same build via --set only must give the identical mesh
    out2 = str(tmp_path / "run2")
    assert main(["mesh", "--example", "1", "--out", out2,
                 "--set", f"h={1 / 12}"]) == 0
    assert int(capsys.readouterr().out.split()[1]) == n_nodes


def test_config_rejections(tmp_path, capsys):
    out = str(tmp_path / "run")
    assert main(["mesh", "--example", "1", "--out", out,
                 "--set", "garbage_key=3"]) == 2
    assert main(["mesh", "--example", "1", "--out", out,
                 "--set", "no_equals_sign"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    assert main(["mesh", "--example", "1", "--out", out,
                 "--config", str(bad)]) == 2
    capsys.readouterr()


def test_train_without_artifacts(tmp_path, capsys):
    out = str(tmp_path / "empty")
    os.makedirs(out)
    assert main(["train", "--out", out]) == 2
    assert "invalid configuration" in capsys.readouterr().err


def test_eval_and_audit(cli_dir, tmp_path, capsys):
    assert main(["eval", "--out", cli_dir, "--n-test", "4",
                 "--methods", "rb_galerkin,rb_deeponet", "--plots"]) == 0
    txt = capsys.readouterr().out
    assert "rb_galerkin" in txt and "rb_deeponet" in txt
    for name in ("report.json", "report.txt", "field_truth.svg",
                 "field_pred.svg", "field_error.svg"):
        assert os.path.exists(os.path.join(cli_dir, name)), name

    assert main(["audit", "--out", cli_dir, "--queries", "8"]) == 0
    out = capsys.readouterr().out
    assert "per-query time" in out
    audit = json.load(open(os.path.join(cli_dir, "audit.json")))
    assert audit["reduced_shapes_equal"] is True


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_train_divergence_exit_code(cli_dir, tmp_path, capsys):
    scratch = str(tmp_path / "copy")
    shutil.copytree(cli_dir, scratch)
    code = main(["train", "--out", scratch, "--set", "lr=1e12",
                 "--set", "epochs=40"])
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err


def test_threads_env_validation(tmp_path, monkeypatch, capsys):
    out = str(tmp_path / "run")
    monkeypatch.setenv("RB_OPERON_THREADS", "zero")
    assert main(["mesh", "--example", "1", "--out", out] + TINY) == 2
    monkeypatch.setenv("RB_OPERON_THREADS", "0")
    assert main(["mesh", "--example", "1", "--out", out] + TINY) == 2
    monkeypatch.setenv("RB_OPERON_THREADS", "1")
    assert main(["mesh", "--example", "1", "--out", out] + TINY) == 0
    capsys.readouterr()


def test_argparse_failures():
    with pytest.raises(SystemExit) as exc:
        main(["mesh", "--example", "1"])          # --out missing
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_console_script_help():
    res = subprocess.run(["rb-operon", "--help"], capture_output=True,
                         text=True, timeout=60)
    assert res.returncode == 0
    for sub in ("mesh", "assemble", "modes", "eim-build", "rb-build",
                "train", "eval", "audit", "bench"):
        assert sub in res.stdout
