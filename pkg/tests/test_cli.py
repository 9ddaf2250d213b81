import json

import pytest

from gatedformer.checkpoint import save_checkpoint
from gatedformer.cli import RUN_DIR_ENV, main
from gatedformer.data import build_vocab
from gatedformer.model import build_model

from conftest import micro_config

CONFIGS = __import__("pathlib").Path(__file__).resolve().parent.parent / "configs"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def tiny_run_config(tmp_path, **train):
    cfg = json.loads((CONFIGS / "copy_eau_grc.json").read_text())
    cfg["model"].update(num_layers=1, model_dim=8, ffn_dim=16, num_heads=2)
    cfg["train"].update({"max_steps": 6, "eval_every": 3, "batch_size": 8, **train})
    cfg["data"].update(num_pairs=40, num_valid=8)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


class TestParams:
    @pytest.mark.parametrize("name,total", [
        ("l3_k256_baseline", 11_066_797), ("l3_k256_eau_grc", 13_239_085),
        ("l2_k128_baseline", 3_698_221), ("l2_k128_eau_grc", 4_061_869),
    ])
    def test_reference_counts(self, capsys, name, total):
        code, out, _ = run(capsys, "params", CONFIGS / f"{name}.json", "--json")
        assert code == 0 and json.loads(out)["total"] == total

    def test_eau_only(self, capsys, tmp_path):
        cfg = json.loads((CONFIGS / "l3_k256_baseline.json").read_text())
        cfg["model"]["use_eau"] = True
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        code, out, _ = run(capsys, "params", tmp_path / "c.json", "--json")
        assert json.loads(out)["total"] == 11_066_797 + 9 * 131_712 == 12_252_205

    def test_text_report(self, capsys):
        code, out, _ = run(capsys, "params", CONFIGS / "l2_k256_eau_grc.json")
        assert code == 0 and "10,671,789" in out and "of which EAU" in out

    def test_unknown_key_is_usage_error(self, capsys, tmp_path):
        cfg = json.loads((CONFIGS / "l3_k256_baseline.json").read_text())
        cfg["model"]["colour"] = "blue"
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        code, _, err = run(capsys, "params", tmp_path / "c.json")
        assert code == 2 and "colour" in err

    def test_missing_required_key_is_usage_error(self, capsys, tmp_path):
        cfg = json.loads((CONFIGS / "l3_k256_baseline.json").read_text())
        del cfg["model"]["dropout"]
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        code, _, err = run(capsys, "params", tmp_path / "c.json")
        assert code == 2 and "dropout" in err

    def test_missing_config_is_io_error(self, capsys, tmp_path):
        code, _, err = run(capsys, "params", tmp_path / "nope.json")
        assert code == 3 and "nope.json" in err


class TestBuildVocab:
    def test_outputs_and_rerun(self, capsys, tmp_path):
        (tmp_path / "s").write_text("a a b\nA b c\nb\nz\n", encoding="utf-8")
        (tmp_path / "t").write_text("x\nx y\ny\nw\n", encoding="utf-8")
        code, out, _ = run(capsys, "build-vocab", tmp_path / "s", tmp_path / "t",
                           "--min-freq", 1, "--out-dir", tmp_path / "v", "--holdout", 0.25)
        assert code == 0 and "heldout_oov_rate=1.0000" in out
        first = (tmp_path / "v" / "src.vocab").read_bytes()
        assert first.decode().splitlines()[4:] == ["a\t3", "b\t3", "c\t1"]
        run(capsys, "build-vocab", tmp_path / "s", tmp_path / "t", "--min-freq", 1,
            "--out-dir", tmp_path / "v", "--holdout", 0.25)
        assert (tmp_path / "v" / "src.vocab").read_bytes() == first

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "build-vocab", tmp_path / "missing.txt", tmp_path / "t",
                           "--out-dir", tmp_path)
        assert code == 3 and "missing.txt" in err


class TestEvaluate:
    def test_self_and_fixture(self, capsys, tmp_path):
        (tmp_path / "ref").write_text("a b c d f\nthe cat sat on the mat\n")
        (tmp_path / "hyp").write_text("a b c d e\n")
        (tmp_path / "ref1").write_text("a b c d f\n")
        code, out, _ = run(capsys, "evaluate", "--ref", tmp_path / "ref", "--hyp", tmp_path / "ref",
                           "--json")
        assert code == 0 and json.loads(out)["bleu"] == 100.0
        code, out, _ = run(capsys, "evaluate", "--ref", tmp_path / "ref1", "--hyp", tmp_path / "hyp")
        assert code == 0 and out.startswith("BLEU = 66.874")

    def test_length_mismatch(self, capsys, tmp_path):
        (tmp_path / "a").write_text("x y\n")
        (tmp_path / "b").write_text("x y\nz\n")
        code, _, err = run(capsys, "evaluate", "--ref", tmp_path / "a", "--hyp", tmp_path / "b")
        assert code == 2 and "references" in err

    def test_needs_a_source_of_hypotheses(self, capsys, tmp_path):
        (tmp_path / "a").write_text("x\n")
        assert run(capsys, "evaluate", "--ref", tmp_path / "a")[0] == 2


class TestGradcheck:
    def test_pass(self, capsys, tmp_path):
        code, out, _ = run(capsys, "gradcheck", "eau", "--json", tmp_path / "r.json")
        assert code == 0 and "overall: PASS" in out
        assert json.loads((tmp_path / "r.json").read_text())["passed"] is True

    def test_unreachable_tolerance(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "grc", "--tolerance", "1e-15")
        assert code == 1 and "overall: FAIL" in out

    def test_all(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "all", "--seed", 2)
        assert code == 0 and "(6/6)" in out

    def test_bad_component_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["gradcheck", "conv"])
        assert exc.value.code == 2


class TestTrainTranslate:
    def test_train_then_translate(self, capsys, tmp_path):
        config = tiny_run_config(tmp_path)
        code, out, _ = run(capsys, "train", config, "--run-dir", tmp_path / "r")
        assert code == 0
        rows = (tmp_path / "r" / "loss.csv").read_text().splitlines()
        assert rows[0] == "step,lr,train_loss,val_loss,val_token_acc" and len(rows) == 7
        assert rows[3].split(",")[3] != "" and rows[1].split(",")[3] == ""
        for name in ("final.gftc", "best.gftc", "config.json"):
            assert (tmp_path / "r" / name).exists()

        (tmp_path / "in.txt").write_text("s1 s2 s3\ns4 s4 s5 s6\n")
        outputs = []
        for i in range(2):
            code, _, _ = run(capsys, "translate", tmp_path / "r" / "final.gftc", tmp_path / "in.txt",
                             "-o", tmp_path / f"out{i}.txt")
            assert code == 0
            outputs.append((tmp_path / f"out{i}.txt").read_text())
        assert outputs[0] == outputs[1] and outputs[0].count("\n") == 2

        (tmp_path / "empty.txt").write_text("")
        code, out, _ = run(capsys, "translate", tmp_path / "r" / "final.gftc", tmp_path / "empty.txt")
        assert code == 0 and out == ""

        code, out, _ = run(capsys, "evaluate", "--ref", tmp_path / "in.txt", "--checkpoint",
                           tmp_path / "r" / "final.gftc", "--src", tmp_path / "in.txt", "--json")
        assert code == 0 and 0.0 <= json.loads(out)["bleu"] <= 100.0

    def test_echoed_config_reproduces_run(self, capsys, tmp_path):
        config = tiny_run_config(tmp_path)
        run(capsys, "train", config, "--run-dir", tmp_path / "a")
        run(capsys, "train", tmp_path / "a" / "config.json", "--run-dir", tmp_path / "b")
        assert (tmp_path / "a" / "loss.csv").read_bytes() == (tmp_path / "b" / "loss.csv").read_bytes()

    def test_resume_continues_the_log(self, capsys, tmp_path):
        config = tiny_run_config(tmp_path)
        run(capsys, "train", config, "--run-dir", tmp_path / "a")
        longer = tiny_run_config(tmp_path / "a", max_steps=9)
        code, _, _ = run(capsys, "train", longer, "--run-dir", tmp_path / "a",
                         "--resume", tmp_path / "a" / "final.gftc")
        assert code == 0
        steps = [r.split(",")[0] for r in (tmp_path / "a" / "loss.csv").read_text().splitlines()[1:]]
        assert steps == [str(i) for i in range(1, 10)]

    def test_run_dir_from_environment(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv(RUN_DIR_ENV, str(tmp_path / "env"))
        code, _, _ = run(capsys, "train", tiny_run_config(tmp_path), "--run-dir", tmp_path / "flag")
        assert code == 0 and (tmp_path / "env" / "loss.csv").exists()
        assert not (tmp_path / "flag").exists()

    def test_no_run_dir(self, capsys, tmp_path, monkeypatch):
        monkeypatch.delenv(RUN_DIR_ENV, raising=False)
        assert run(capsys, "train", tiny_run_config(tmp_path))[0] == 2

    def test_vocab_mismatch(self, capsys, tmp_path):
        save_checkpoint(build_model(micro_config()), tmp_path / "m.gftc")
        build_vocab(["a b"], 1).save(tmp_path / "v")
        (tmp_path / "in.txt").write_text("a\n")
        code, _, err = run(capsys, "translate", tmp_path / "m.gftc", tmp_path / "in.txt",
                           "--src-vocab", tmp_path / "v", "--tgt-vocab", tmp_path / "v")
        assert code == 2 and "do not match" in err

    def test_corrupt_checkpoint(self, capsys, tmp_path):
        (tmp_path / "bad.gftc").write_bytes(b"nonsense")
        (tmp_path / "in.txt").write_text("a\n")
        assert run(capsys, "translate", tmp_path / "bad.gftc", tmp_path / "in.txt")[0] == 2
