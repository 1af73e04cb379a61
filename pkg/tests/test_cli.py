import json

import pytest

from statereach.cli import main
from statereach.manifest import verify_chain


def run(*args):
    return main([str(a) for a in args])


def test_usage_errors_exit_2(tmp_path, capsys):
    assert run("explore") == 2
    assert run("explore", "--env", "humanoid", "--artifacts", tmp_path) == 2
    assert run("nonsense") == 2
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert run("explore", "--config", cfg, "--env", "point_mass", "--artifacts", tmp_path) == 2
    assert "colour" in capsys.readouterr().err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("art")
    cfg = root / "explore.cfg"
    cfg.write_text("env = pendulum_cart\nbudget = 300  # small\n")
    assert run("explore", "--config", cfg, "--seed", 1, "--artifacts", root) == 0
    buf = root / "buffers" / "pendulum_cart_contact_N300_s1.tsv"
    assert run("train-llc", "--buffer", buf, "--hmax", 2, "--M", 1, "--N", 40,
               "--pretrain-epochs", 1, "--artifacts", root) == 0
    return root, buf, root / "llc" / "pendulum_cart_contact_H2_s0"


def test_config_file_and_flag_precedence(pipeline):
    root, buf, _ = pipeline
    man = json.loads((buf.parent / (buf.name + ".manifest.json")).read_text())
    assert man["config"]["budget"] == 300 and man["config"]["seed"] == 1
    assert man["config"]["env"] == "pendulum_cart"


def test_naive_mode_default_episode_length(tmp_path):
    assert run("explore", "--env", "pendulum_cart", "--mode", "naive", "--budget", 200,
               "--artifacts", tmp_path) == 0
    meta = json.loads((tmp_path / "buffers" / "pendulum_cart_naive_N200_s0.tsv.meta.json").read_text())
    assert meta["config"]["K"] == 100


def test_train_writes_one_file_per_horizon(pipeline):
    _, _, llc = pipeline
    assert sorted(p.name for p in llc.glob("pi_*.npz")) == ["pi_1.npz", "pi_2.npz"]
    assert (llc / "history.csv").read_text().count("\n") == 3
    assert len(verify_chain(llc)) == 2


def test_optimize_refuses_mismatches(pipeline):
    root, _, llc = pipeline
    base = ["optimize", "--optimizer", "cma", "--iterations", 1, "--horizon", 0.5, "--artifacts", root]
    assert run(*base, "--env", "pendulum_cart", "--mode", "llc_contact", "--llc", llc, "--H", 3) == 2
    assert run(*base, "--env", "planar_hopper", "--mode", "llc_contact", "--llc", llc) == 2
    assert run(*base, "--env", "pendulum_cart", "--mode", "llc_naive", "--llc", llc) == 2
    assert run(*base, "--env", "pendulum_cart", "--mode", "llc_contact") == 2


def test_optimize_landscape_report(pipeline, capsys):
    root, buf, llc = pipeline
    common = ["--env", "pendulum_cart", "--artifacts", root]
    assert run("optimize", "--optimizer", "cma", "--mode", "llc_contact", "--llc", llc, "--H", 2,
               "--iterations", 2, "--popsize", 4, "--horizon", 0.5, "--seeds", "0,1", *common) == 0
    assert run("optimize", "--optimizer", "mpc", "--mode", "baseline", "--rollouts", 8,
               "--plan-steps", 3, "--steps", 4, "--seeds", "0,1", *common) == 0
    runs = root / "runs" / "cma_pendulum_cart_balance_llc_contact_H2"
    assert run("landscape", "--mode", "llc_contact", "--llc", llc, "--H", 2, "--resolution", 3,
               "--decision", runs / "seed0.decision.csv", *common) == 0
    assert run("report", "--records", root / "runs", "--coverage", buf, "--artifacts", root) == 0
    out = capsys.readouterr().out
    assert "score=" in out and "budget=" in out
    table = (root / "reports" / "scores.csv").read_text().splitlines()
    assert table[0] == "optimizer,action_space,H,score,n_runs,mean_budget"
    assert len(verify_chain(root / "landscapes" / "pendulum_cart_balance_llc_contact_s0.csv")) == 4


def test_report_needs_two_runs_per_group(tmp_path, pipeline):
    root, _, _ = pipeline
    assert run("optimize", "--optimizer", "mpc", "--env", "point_mass", "--task", "reach",
               "--rollouts", 4, "--plan-steps", 2, "--steps", 2, "--artifacts", tmp_path) == 0
    assert run("report", "--records", tmp_path / "runs", "--artifacts", tmp_path) == 2


def test_rerun_reproduces_hashes(tmp_path):
    from statereach.manifest import ArtifactManifest

    hashes = []
    for name in ("a", "b"):
        assert run("explore", "--env", "point_mass", "--budget", 100, "--artifacts", tmp_path / name) == 0
        hashes.append(ArtifactManifest.read(tmp_path / name / "buffers" / "point_mass_contact_N100_s0.tsv").content_hash)
    assert hashes[0] == hashes[1]


def test_tampered_upstream_is_detected(tmp_path):
    assert run("explore", "--env", "pendulum_cart", "--budget", 100, "--artifacts", tmp_path) == 0
    buf = tmp_path / "buffers" / "pendulum_cart_contact_N100_s0.tsv"
    assert run("train-llc", "--buffer", buf, "--hmax", 1, "--M", 1, "--N", 20, "--pretrain-epochs", 1,
               "--artifacts", tmp_path) == 0
    llc = tmp_path / "llc" / "pendulum_cart_contact_H1_s0"
    assert run("verify", llc) == 0
    with open(buf, "a") as fh:
        fh.write("0\n")
    assert run("verify", llc) == 2
