import json
import os

import pytest

from intentcf import cli, synthetic


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_world")
    raw = str(root / "raw")
    data = synthetic.planted_channel_data(n_users=80, n_items=50, n_channels=3, seed=5)
    ratings, genres = data.write(raw)
    prep = str(root / "prep")
    code = cli.main(["prepare", "--ratings", ratings, "--genres", genres, "--out", prep, "--seed", "3"])
    assert code == 0
    run = str(root / "run")
    code = cli.main([
        "train", "--data", prep, "--out", run, "--quiet", "--seed", "4",
        "--set", "k=3", "--set", "d=4", "--set", "l=2",
        "--set", "intent_hidden=8", "--set", "item_hidden=8", "--set", "pref_hidden=8",
        "--set", "batch_size=40", "--set", "pretrain_epochs=2", "--set", "unified_epochs=2",
        "--set", "kappa=10", "--set", "patience=20",
    ])
    assert code == 0
    return {"raw": raw, "prep": prep, "run": run, "ckpt": os.path.join(run, "best.ckpt")}


class TestPrepare:
    def test_manifest_contents(self, world):
        manifest = open(os.path.join(world["prep"], "manifest.txt")).read()
        assert "min_interactions: 10" in manifest
        assert "fractions: 0.6/0.1/0.3" in manifest
        assert "seed: 3" in manifest

    def test_same_seed_identical_manifests(self, world, tmp_path):
        out2 = str(tmp_path / "prep2")
        code = cli.main(["prepare", "--ratings", os.path.join(world["raw"], "ratings.tsv"),
                         "--genres", os.path.join(world["raw"], "genres.txt"),
                         "--out", out2, "--seed", "3"])
        assert code == 0
        a = open(os.path.join(world["prep"], "manifest.txt")).read()
        b = open(os.path.join(out2, "manifest.txt")).read()
        assert a == b

    def test_missing_file_exit_2(self, capsys):
        code = cli.main(["prepare", "--ratings", "/nonexistent/r.csv", "--out", "/tmp/x"])
        assert code == 2
        assert "not found" in capsys.readouterr().err

    def test_bad_fractions_exit_2(self, world):
        code = cli.main(["prepare", "--ratings", os.path.join(world["raw"], "ratings.tsv"),
                         "--out", "/tmp/xx", "--fractions", "0.5,0.5"])
        assert code == 2


class TestTrainCli:
    def test_unknown_config_key_exit_2(self, world, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"k": 3, "bogus_key": 1}))
        code = cli.main(["train", "--data", world["prep"], "--out", str(tmp_path / "o"),
                         "--config", str(cfg)])
        assert code == 2
        assert "bogus_key" in capsys.readouterr().err

    def test_flags_override_config(self, world, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "k": 3, "d": 4, "l": 2, "intent_hidden": 8, "item_hidden": 8, "pref_hidden": 8,
            "batch_size": 40, "pretrain_epochs": 1, "unified_epochs": 1, "kappa": 10,
            "seed": 1, "patience": 20,
        }))
        out = str(tmp_path / "run")
        code = cli.main(["train", "--data", world["prep"], "--out", out, "--config", str(cfg),
                         "--seed", "42", "--variant", "ddcf-s", "--quiet"])
        assert code == 0
        manifest = open(os.path.join(out, "run_manifest.txt")).read()
        assert "seed: 42" in manifest
        assert "variant: ddcf-s" in manifest

    def test_skip_pretrain_warning(self, world, tmp_path):
        out = str(tmp_path / "run")
        code = cli.main(["train", "--data", world["prep"], "--out", out, "--quiet",
                         "--skip-pretrain",
                         "--set", "k=3", "--set", "d=4", "--set", "intent_hidden=8",
                         "--set", "item_hidden=8", "--set", "pref_hidden=8",
                         "--set", "batch_size=40", "--set", "unified_epochs=1",
                         "--set", "pretrain_epochs=0", "--set", "patience=20"])
        assert code == 0
        assert "pretraining skipped" in open(os.path.join(out, "run_manifest.txt")).read()


class TestReports:
    def test_eval_text_and_json(self, world, capsys):
        assert cli.main(["eval", "--checkpoint", world["ckpt"], "--data", world["prep"]]) == 0
        text = capsys.readouterr().out
        assert "config_hash:" in text and "precision" in text
        assert cli.main(["eval", "--checkpoint", world["ckpt"], "--data", world["prep"], "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert set(payload["metrics"]) == {"precision", "recall", "map", "ndcg"}
        assert "config_hash" in payload and "seed" in payload

    def test_channels_list_and_user_view(self, world, capsys):
        assert cli.main(["channels", "--checkpoint", world["ckpt"], "--data", world["prep"],
                         "--top", "4"]) == 0
        out = capsys.readouterr().out
        assert "channel 0:" in out and "channel 2:" in out
        assert cli.main(["channels", "--checkpoint", world["ckpt"], "--data", world["prep"],
                         "--user", "u0", "--top", "3", "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["user"] == "u0"
        assert len(payload["channels"]) == 3
        weights = [c["weight"] for c in payload["channels"]]
        assert abs(sum(weights) - 1.0) < 1e-9

    def test_recommend_normalization_invariance(self, world, capsys):
        assert cli.main(["recommend", "--checkpoint", world["ckpt"], "--data", world["prep"],
                         "--user", "u0", "--intent", "0:0.5,2:0.5", "--json"]) == 0
        a = json.loads(capsys.readouterr().out)
        assert cli.main(["recommend", "--checkpoint", world["ckpt"], "--data", world["prep"],
                         "--user", "u0", "--intent", "0:5,2:5", "--json"]) == 0
        b = json.loads(capsys.readouterr().out)
        assert [r["item"] for r in a["items"]] == [r["item"] for r in b["items"]]

    def test_recommend_similar(self, world, capsys):
        assert cli.main(["recommend", "--checkpoint", world["ckpt"], "--data", world["prep"],
                         "--similar-to", "i0", "--n", "3", "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert len(payload["items"]) == 3
        assert all(r["item"] != "i0" for r in payload["items"])

    def test_cooccur_report(self, world, capsys):
        assert cli.main(["cooccur", "--checkpoint", world["ckpt"], "--data", world["prep"],
                         "--top", "5", "--shuffles", "10", "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert 0.0 <= payload["rate"] <= 1.0
        assert 0.0 <= payload["baseline_rate"] <= 1.0

    def test_unknown_user_exit_2(self, world, capsys):
        code = cli.main(["recommend", "--checkpoint", world["ckpt"], "--data", world["prep"],
                         "--user", "nobody"])
        assert code == 2
        assert "unknown user" in capsys.readouterr().err

    def test_checkpoint_data_mismatch(self, world, tmp_path, capsys):
        other_raw = str(tmp_path / "raw2")
        data = synthetic.planted_channel_data(n_users=40, n_items=30, n_channels=2, seed=9)
        ratings, genres = data.write(other_raw)
        prep2 = str(tmp_path / "prep2")
        assert cli.main(["prepare", "--ratings", ratings, "--out", prep2]) == 0
        code = cli.main(["eval", "--checkpoint", world["ckpt"], "--data", prep2])
        assert code == 2
        assert "does not match" in capsys.readouterr().err

    def test_determinism_same_command_same_output(self, world, capsys):
        cli.main(["recommend", "--checkpoint", world["ckpt"], "--data", world["prep"],
                  "--user", "u1", "--json"])
        a = capsys.readouterr().out
        cli.main(["recommend", "--checkpoint", world["ckpt"], "--data", world["prep"],
                  "--user", "u1", "--json"])
        b = capsys.readouterr().out
        assert a == b
