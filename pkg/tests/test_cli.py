import numpy as np
import pytest

from gaitstrip.main import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main_cli
from gaitstrip.modules.serialization import load_embeddings, load_weights, save_weights
from gaitstrip.modules.sequence import write_pgm


@pytest.fixture
def weights_path(tmp_path, tiny_weights):
    path = tmp_path / "tiny.gsw"
    save_weights(tiny_weights, path)
    return path


@pytest.fixture
def seq_dir(tmp_path, rng):
    directory = tmp_path / "001-nm-01-090"
    directory.mkdir()
    for i in range(3):
        write_pgm(directory / f"{i:03d}.pgm", rng.integers(0, 256, size=(16, 12), dtype=np.uint8))
    return directory


def test_usage_errors(capsys):
    assert main_cli([]) == EXIT_USAGE
    assert main_cli(["init", "--config", "casiab"]) == EXIT_USAGE
    assert main_cli(["frobnicate"]) == EXIT_USAGE
    capsys.readouterr()


def test_runtime_error_exit_code(tmp_path, capsys):
    assert main_cli(["fuse", "--in", str(tmp_path / "nope.gsw"), "--out", str(tmp_path / "o.gsw")]) == EXIT_FAILURE
    err = capsys.readouterr().err
    assert any(line.startswith("error:") for line in err.splitlines())
    assert "fuse failed" not in err


def test_bad_magic_exit_code(tmp_path, capsys):
    bogus = tmp_path / "bogus.gsw"
    bogus.write_bytes(b"NOTMAGIC" + bytes(16))
    assert main_cli(["fuse", "--in", str(bogus), "--out", str(tmp_path / "o.gsw")]) == EXIT_FAILURE
    assert "bad magic" in capsys.readouterr().err


def test_fuse_verify(weights_path, tmp_path, capsys):
    out = tmp_path / "fused.gsw"
    code = main_cli(["fuse", "--in", str(weights_path), "--out", str(out), "--verify", "--probes", "1"])
    assert code == EXIT_OK
    line = capsys.readouterr().out.strip()
    fields = dict(part.split("=") for part in line.split())
    assert float(fields["max_abs_divergence"]) <= 1e-3
    assert int(fields["params_before"]) > int(fields["params_after"])
    assert load_weights(out).fused


def test_fuse_twice_fails(weights_path, tmp_path, capsys):
    out = tmp_path / "fused.gsw"
    assert main_cli(["fuse", "--in", str(weights_path), "--out", str(out)]) == EXIT_OK
    assert main_cli(["fuse", "--in", str(out), "--out", str(tmp_path / "again.gsw")]) == EXIT_FAILURE
    assert "already fused" in capsys.readouterr().err


def test_infer_then_eval(weights_path, seq_dir, tmp_path, capsys):
    out = tmp_path / "gallery.gse"
    args = ["infer", "--weights", str(weights_path), "--seq", str(seq_dir), "--out", str(out)]
    assert main_cli([*args, "--label", "1", "--view", "090"]) == EXIT_OK
    assert main_cli([*args, "--label", "2", "--view", "000", "--id", "002-nm-01-000"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "id=001-nm-01-090 frames=3 count=1"
    assert lines[1] == "id=002-nm-01-000 frames=3 count=2"

    records = load_embeddings(out)
    assert [e.label for e in records] == [1, 2]
    assert records[0].values.shape == (24, 6)

    assert main_cli(["eval", "--gallery", str(out), "--probe", str(out)]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[0].startswith("rank1=")


def test_eval_self_retrieval(tmp_path, capsys):
    from gaitstrip.modules.model import Embedding
    from gaitstrip.modules.serialization import save_embeddings
    from gaitstrip.modules.tensor import Tensor

    records = [
        Embedding(
            values=Tensor(np.full((2, 2), 10.0 * i)),
            sequence_id=f"00{i}-nm-01-{view}",
            label=i,
            view=view,
        )
        for i in range(3)
        for view in ("000", "090")
    ]
    path = tmp_path / "set.gse"
    save_embeddings(records, path)
    assert main_cli(["eval", "--gallery", str(path), "--probe", str(path)]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "rank1=1.0"

    code = main_cli(
        ["eval", "--gallery", str(path), "--probe", str(path), "--exclude-same-view", "--per-view", "--by-condition"],
    )
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "rank1=1.0"
    assert "mean" in out
    assert "condition=nm rank1=1.0" in out


def test_eval_unlabeled_fails(weights_path, seq_dir, tmp_path, capsys):
    out = tmp_path / "probe.gse"
    main_cli(["infer", "--weights", str(weights_path), "--seq", str(seq_dir), "--out", str(out)])
    assert main_cli(["eval", "--gallery", str(out), "--probe", str(out)]) == EXIT_FAILURE
    assert "without labels" in capsys.readouterr().err


def test_bench(weights_path, seq_dir, capsys):
    code = main_cli(["bench", "--weights", str(weights_path), "--seq", str(seq_dir), "--repeat", "1"])
    assert code == EXIT_OK
    fields = dict(part.split("=") for part in capsys.readouterr().out.split())
    assert set(fields) == {"unfused_s", "fused_s", "speedup"}
    assert float(fields["speedup"]) > 0


def test_bench_rejects_zero_repeat(weights_path, seq_dir):
    assert main_cli(["bench", "--weights", str(weights_path), "--seq", str(seq_dir), "--repeat", "0"]) == EXIT_FAILURE


@pytest.mark.slow
def test_init_casiab(tmp_path, capsys):
    out = tmp_path / "casiab.gsw"
    assert main_cli(["init", "--config", "casiab", "--seed", "0", "--out", str(out)]) == EXIT_OK
    line = capsys.readouterr().out.strip()
    assert line.startswith("fingerprint=")
    assert load_weights(out).config.total_bins == 96


def test_init_small_variant(tmp_path, capsys):
    out = tmp_path / "low.gsw"
    args = ["init", "--config", "casiab", "--seed", "1", "--out", str(out)]
    assert main_cli([*args, "--levels", "low", "--dim", "4", "--block-kind", "st_only"]) == EXIT_OK
    w = load_weights(out)
    assert w.config.embedding_dim == 4
    assert w.high == []
    assert "params=" in capsys.readouterr().out


@pytest.mark.slow
def test_selftest_quick(capsys):
    assert main_cli(["selftest", "--quick"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "block_fusion=ok" in out
    assert "FAIL" not in out


def test_infer_without_label(weights_path, seq_dir, tmp_path, capsys):
    out = tmp_path / "unlabeled.gse"
    args = ["infer", "--weights", str(weights_path), "--seq", str(seq_dir), "--out", str(out)]
    assert main_cli(args) == EXIT_OK
    assert main_cli([*args, "--id", "002-nm-01-090"]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[1] == "id=002-nm-01-090 frames=3 count=2"
    assert [e.label for e in load_embeddings(out)] == [None, None]


def test_unknown_log_level(monkeypatch, tmp_path, capsys):
    assert main_cli(["--log-level", "bogus", "selftest", "--quick"]) == EXIT_USAGE
    monkeypatch.setenv("GAITSTRIP_LOG_LEVEL", "bogus")
    out = tmp_path / "x.gsw"
    args = ["init", "--config", "casiab", "--seed", "0", "--out", str(out), "--levels", "low"]
    assert main_cli(args) == EXIT_FAILURE
    assert "GAITSTRIP_" in capsys.readouterr().err
    assert not out.exists()


def test_log_level_flag_is_case_insensitive(weights_path, tmp_path):
    out = tmp_path / "fused.gsw"
    assert main_cli(["--log-level", "debug", "fuse", "--in", str(weights_path), "--out", str(out)]) == EXIT_OK


def test_init_rejects_zero_dim(tmp_path, capsys):
    out = tmp_path / "zero.gsw"
    args = ["init", "--config", "casiab", "--seed", "0", "--out", str(out), "--levels", "low", "--dim", "0"]
    assert main_cli(args) == EXIT_FAILURE
    assert "embedding_dim" in capsys.readouterr().err
    assert not out.exists()
