"""End-to-end smoke tests for the python bindings."""

import csv
import math
import os

import pytest

import dynalab


def test_version_matches_package():
    assert dynalab.version() == "0.1.0"
    assert dynalab.__version__ == dynalab.version()


def test_default_config_exposes_the_run_keys():
    cfg = dynalab.default_config()
    assert cfg["run.env"] == "pendulum"
    assert cfg["model.members"] == "5"
    assert "adaptation.strategy" in cfg
    assert all(isinstance(k, str) and isinstance(v, str) for k, v in cfg.items())


def test_metrics_header_is_pinned():
    assert dynalab.metrics_header() == (
        "real_step,epoch,eval_return,model_train_loss,model_val_loss,"
        "eps_5,eps_10,eps_20,w1_estimate,l_gp,adaptation_steps,wall_clock_s"
    )


def test_theory_check_holds_on_a_small_sweep():
    report = dynalab.theory_check(instances=40, master_seed=7)
    assert report["all_hold"] is True
    assert report["instances_per_family"] == 40
    assert report["lemma_violations"] == 0
    assert report["max_identity_residual"] < 1e-9


def test_theory_check_rejects_a_bad_instance_count():
    with pytest.raises(ValueError):
        dynalab.theory_check(instances=0)


def test_mmd_matches_the_four_term_hand_value():
    # two identical batches {0, 1} at bandwidth 1: the unbiased estimate is
    # exp(-1) - 1, not zero, because self-pairs are excluded
    got = dynalab.mmd2_unbiased([[0.0], [1.0]], [[0.0], [1.0]], [1.0])
    assert got == pytest.approx(math.exp(-1.0) - 1.0, abs=1e-14)


def test_mmd_rejects_ragged_batches():
    with pytest.raises(ValueError):
        dynalab.mmd2_unbiased([[0.0], [1.0, 2.0]], [[0.0], [1.0]], [1.0])


@pytest.fixture()
def micro_config(tmp_path):
    path = tmp_path / "micro.cfg"
    path.write_text(
        "\n".join(
            [
                "[run]",
                "seeds = 3",
                "total_real_steps = 250",
                "pretrain_random_steps = 200",
                "steps_per_epoch = 250",
                "rollout_batch = 64",
                "policy_updates_per_step = 1",
                "real_ratio = 0.7",
                "eval_episodes = 1",
                "out_name = smoke",
                "[model]",
                "members = 2",
                "hidden = 16,16",
                "max_steps = 40",
                "[agent]",
                "hidden = 16,16",
                "[adaptation]",
                "enabled = true",
                "critic_steps = 2",
                "batch_size = 32",
                "critic_hidden = 16,16",
                "",
            ]
        )
    )
    return path


def test_train_writes_csv_and_returns_records(micro_config, tmp_path):
    out_dir = tmp_path / "runs"
    results = dynalab.train(str(micro_config), str(out_dir))
    assert len(results) == 1
    res = results[0]
    assert res["error"] == ""
    assert res["seed"] == 3
    assert os.path.isfile(res["csv_path"])
    assert len(res["records"]) >= 2  # the pretrain row plus one epoch

    with open(res["csv_path"], newline="") as fh:
        rows = list(csv.reader(fh))
    assert ",".join(rows[0]) == dynalab.metrics_header()
    assert len(rows) == len(res["records"]) + 1
    final = res["records"][-1]
    assert final["real_step"] == 450
    assert math.isfinite(final["eval_return"])
    assert math.isfinite(final["model_val_loss"])


def test_train_rejects_an_unknown_key(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[run]\nwarp_speed = 9\n")
    with pytest.raises(ValueError):
        dynalab.train(str(bad), str(tmp_path / "runs"))


def test_sweep_produces_a_manifest(micro_config, tmp_path):
    out_dir = tmp_path / "sweep"
    cells = dynalab.sweep(
        str(micro_config), "model.members", ["1", "2"], str(out_dir)
    )
    assert [c["value"] for c in cells] == ["1", "2"]
    assert all(c["error"] == "" for c in cells)
    assert all(os.path.isfile(c["csv_path"]) for c in cells)
    assert os.path.isfile(out_dir / "smoke_manifest.csv")
