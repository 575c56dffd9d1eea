import csv
import os
import subprocess
import sys

import numpy as np
import pytest

from unrolled import checkpoint
from unrolled.blocks import BlockVariant, NetworkSpec, StageSpec, init_network, with_block_params
from unrolled.cli import (
    ConfigError,
    RunConfig,
    count_parameters,
    matched_widths,
    parse_config,
    run,
)

FAST = ["--epochs", "2", "--n-per-class", "20", "--widths", "6", "--blocks", "3"]


def files_under(root):
    return sorted(os.path.relpath(os.path.join(d, f), root) for d, _, fs in os.walk(root) for f in fs)


def read_csv(path):
    return list(csv.reader(open(path)))


class TestParseConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        (tmp_path / "c.cfg").write_text("")
        assert parse_config(tmp_path / "c.cfg") == RunConfig()

    def test_comments_and_types(self, tmp_path):
        (tmp_path / "c.cfg").write_text("# header\nepochs = 7  # inline\nvariant=full\n\nnoise=0.25\n")
        cfg = parse_config(tmp_path / "c.cfg")
        assert (cfg.epochs, cfg.variant, cfg.noise) == (7, "full", 0.25)

    def test_flag_overrides_file(self, tmp_path):
        (tmp_path / "c.cfg").write_text("learning_rate=0.05\n")
        assert parse_config(tmp_path / "c.cfg").learning_rate == 0.05
        assert parse_config(tmp_path / "c.cfg", {"learning_rate": 0.1}).learning_rate == 0.1

    def test_momentum_bound_names_key(self, tmp_path):
        (tmp_path / "c.cfg").write_text("momentum=1.5\n")
        with pytest.raises(ConfigError, match="momentum"):
            parse_config(tmp_path / "c.cfg")

    def test_unknown_key_names_key_and_line(self, tmp_path):
        (tmp_path / "c.cfg").write_text("epochs=3\nbogus=1\n")
        with pytest.raises(ConfigError, match=r"line 2.*bogus"):
            parse_config(tmp_path / "c.cfg")

    def test_unparsable_value(self, tmp_path):
        (tmp_path / "c.cfg").write_text("epochs=many\n")
        with pytest.raises(ConfigError, match=r"line 1.*epochs"):
            parse_config(tmp_path / "c.cfg")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config(tmp_path / "nope.cfg")

    def test_stage_count_mismatch(self):
        with pytest.raises(ConfigError, match="stages"):
            parse_config(None, {"widths": "8,8", "blocks": "2"})


class TestRun:
    def test_train_deterministic(self, tmp_path):
        for d in ("a", "b"):
            assert run(["train", "--out-dir", str(tmp_path / d), "--seed", "3", *FAST]) == 0
        for name in ("metrics.csv", "model.ckpt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        rows = read_csv(tmp_path / "a" / "metrics.csv")
        assert rows[0] == ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]
        assert len(rows) == 3

    def test_writes_only_inside_out_dir(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert run(["train", "--out-dir", "out", *FAST]) == 0
        ck = "out/model.ckpt"
        for cmd in ("eval", "profile", "lesion", "shuffle"):
            assert run([cmd, "--out-dir", "out", "--checkpoint", ck, *FAST, "--n-perms", "3"]) == 0
        assert files_under(tmp_path) == sorted(
            os.path.join("out", f)
            for f in ("metrics.csv", "model.ckpt", "eval.csv", "profile.csv", "lesion.csv", "shuffle.csv")
        )

    def test_subcommands_deterministic(self, tmp_path):
        ck = tmp_path / "m.ckpt"
        assert run(["train", "--out-dir", str(tmp_path / "t"), *FAST]) == 0
        os.replace(tmp_path / "t" / "model.ckpt", ck)
        for cmd, out in (("profile", "profile.csv"), ("lesion", "lesion.csv"), ("shuffle", "shuffle.csv")):
            outs = []
            for d in ("x", "y"):
                args = [cmd, "--out-dir", str(tmp_path / d), "--checkpoint", str(ck), *FAST, "--n-perms", "5"]
                assert run(args) == 0
                outs.append((tmp_path / d / out).read_bytes())
            assert outs[0] == outs[1]

    def test_profile_zero_h_residual(self, tmp_path):
        spec = NetworkSpec(2, (StageSpec(6, 3, BlockVariant.RESIDUAL),), 3, seed=0)
        net = init_network(spec)
        for b in range(3):
            net = with_block_params(net, 0, b, h_w=np.zeros((6, 6)), h_b=np.zeros(6))
        checkpoint.save(net, tmp_path / "z.ckpt")
        args = ["profile", "--checkpoint", str(tmp_path / "z.ckpt"), "--out-dir", str(tmp_path), *FAST]
        assert run(args) == 0
        rows = read_csv(tmp_path / "profile.csv")
        assert rows[0] == ["stage", "block", "mean_err", "std_err"]
        assert len(rows) == 4
        assert all(float(r[2]) == 0.0 and float(r[3]) == 0.0 for r in rows[1:])

    def test_fusion_demo(self, tmp_path, capsys):
        assert run(["fusion-demo", "--out-dir", str(tmp_path), "--mc-samples", "20000"]) == 0
        text = (tmp_path / "fusion.csv").read_text()
        assert capsys.readouterr().out == text
        rows = list(csv.DictReader(text.splitlines()))
        first = rows[0]
        assert float(first["q1"]) == 0.5 and float(first["fused_variance"]) == 0.5
        assert float(rows[1]["q1"]) == 0.75

    def test_compare_variants_table(self, tmp_path):
        args = ["compare-variants", "--task", "feature-swap", "--n-samples", "200", "--seeds", "2",
                "--epochs", "1", "--widths", "8", "--blocks", "2", "--out-dir", str(tmp_path)]
        assert run(args) == 0
        rows = read_csv(tmp_path / "variants.csv")
        assert rows[0][:6] == ["rank", "variant", "widths", "params", "param_ratio", "median_val_acc"]
        assert sorted(r[1] for r in rows[1:]) == sorted(v.value for v in BlockVariant)
        assert [int(r[0]) for r in rows[1:]] == list(range(1, 7))
        meds = [float(r[5]) for r in rows[1:]]
        assert meds == sorted(meds, reverse=True)
        assert all(abs(float(r[4]) - 1.0) <= 0.05 for r in rows[1:])

    @pytest.mark.parametrize(
        "argv",
        [
            ["frobnicate"],
            ["train", "--no-such-flag", "1"],
            ["train", "--momentum", "1.5"],
            ["eval", "--checkpoint", "/nonexistent/model.ckpt"],
            ["eval"],
            ["train", "--config", "/nonexistent.cfg"],
            ["train", "--task", "idx"],
        ],
    )
    def test_errors_nonzero_single_line(self, argv, tmp_path, capsys):
        code = run([*argv, "--out-dir", str(tmp_path / "o")])
        assert code != 0
        err = capsys.readouterr().err.strip()
        assert err.startswith("unrolled: error:") and "\n" not in err

    def test_corrupt_checkpoint(self, tmp_path, capsys):
        (tmp_path / "bad.ckpt").write_bytes(b"garbage")
        assert run(["eval", "--checkpoint", str(tmp_path / "bad.ckpt"), "--out-dir", str(tmp_path)]) == 1
        assert "magic" in capsys.readouterr().err

    def test_help_lists_defaults(self):
        out = subprocess.run([sys.executable, "-m", "unrolled", "--help"], capture_output=True, text=True)
        assert out.returncode == 0
        assert "--learning-rate" in out.stdout and "0.1" in out.stdout


class TestParameterMatching:
    @pytest.mark.parametrize("variant", list(BlockVariant), ids=lambda v: v.value)
    def test_within_five_percent(self, variant):
        cfg = RunConfig(widths="16,12", blocks="4,4")
        ref = count_parameters(cfg.network_spec(8, 2, "residual"))
        ws = matched_widths(cfg, variant, 8, 2)
        got = count_parameters(cfg.network_spec(8, 2, variant.value, ws))
        assert abs(got / ref - 1) <= 0.05

    def test_count_matches_network(self):
        cfg = RunConfig(widths="7,5,5", blocks="2,1,3", variant="full")
        spec = cfg.network_spec(4, 3)
        assert count_parameters(spec) == init_network(spec).num_parameters()
