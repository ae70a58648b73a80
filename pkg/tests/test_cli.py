import csv
import json

import numpy as np
import pytest

from freedomrec.cli import build_run_config, main, parse_kv_lines
from freedomrec.errors import ParameterError
from freedomrec.interaction_graph import read_dense_pairs
from freedomrec.modality_graph import read_fmat, write_fmat
from freedomrec.model import load_checkpoint
from freedomrec.training import TrainConfig, config_diff


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "raw"), "--users", "80", "--items", "40", "--seed", "1"]) == 0
    assert main(["prepare", str(root / "raw" / "interactions.tsv"), "--out", str(root / "data"), "--core", "3",
                 "--features", f"visual={root / 'raw' / 'visual.fmat'}",
                 "--features", f"textual={root / 'raw' / 'textual.fmat'}"]) == 0
    cfg = root / "run.cfg"
    cfg.write_text(f"# small run\ndata_dir={root / 'data'}\nd=16\nmax_epochs=15\nbatch_size=256\nlr=0.01\n")
    return root, cfg


def _train(root, cfg, name, *extra):
    out = root / name
    code = main(["train", "--config", str(cfg), "--out", str(out), *extra])
    return code, out


class TestConfig:
    def test_parse_comments_and_blank_lines(self):
        assert parse_kv_lines("a=1 # x\n\n# only\nb = two\n") == {"a": "1", "b": "two"}

    def test_parse_rejects_garbage(self):
        with pytest.raises(ParameterError):
            parse_kv_lines("novalue\n")

    def test_types_and_alias(self):
        rc = build_run_config({"lambda": "0.5", "k": "7", "weighted_graph": "true", "data_dir": "/x"})
        assert rc.train.lambda_modal == 0.5 and rc.train.k == 7 and rc.train.weighted_graph is True
        assert rc.data_dir == "/x"

    @pytest.mark.parametrize("tag,delta", [("freedom_0", {"lambda_modal": (1e-3, 0.0)}),
                                           ("freedom_f", {"rho": (0.8, 0.0)})])
    def test_ablation_mapping(self, tag, delta):
        assert config_diff(TrainConfig(), build_run_config({}, tag).train) == delta

    def test_hash_depends_on_config(self):
        a = build_run_config({}).config_hash()
        assert a == build_run_config({}).config_hash()
        assert a != build_run_config({"seed": "1"}).config_hash()


class TestPrepare:
    def test_fixpoint_and_feature_remap(self, prepared):
        root, _ = prepared
        raw_u, _ = read_dense_pairs(root / "raw" / "interactions.tsv")
        data = root / "data"
        total = sum(len(read_dense_pairs(data / f"{p}.tsv")[0]) for p in ("train", "val", "test"))
        # synthetic users have >= 3 interactions and items are popular, so the 3-core keeps almost everything
        assert 0 < total <= len(raw_u)
        item_map = [line.split("\t") for line in (data / "item_map.tsv").read_text().splitlines()]
        raw_feats = read_fmat(root / "raw" / "visual.fmat", "visual").features
        new_feats = read_fmat(data / "visual.fmat", "visual").features
        for dense, raw in item_map[:5]:
            np.testing.assert_array_equal(new_feats[int(dense)], raw_feats[int(raw)])

    def test_already_core_is_idempotent(self, tmp_path):
        lines = [f"u{u}\ti{i}\n" for u in range(6) for i in range(6)]
        (tmp_path / "r.tsv").write_text("".join(lines))
        assert main(["prepare", str(tmp_path / "r.tsv"), "--out", str(tmp_path / "o")]) == 0
        n = sum(len(read_dense_pairs(tmp_path / "o" / f"{p}.tsv")[0]) for p in ("train", "val", "test"))
        assert n == 36

    def test_empty_after_filter_fails(self, tmp_path, capsys):
        (tmp_path / "r.tsv").write_text("a\tb\n")
        assert main(["prepare", str(tmp_path / "r.tsv"), "--out", str(tmp_path / "o")]) == 2
        assert "error" in capsys.readouterr().err


class TestTrainEval:
    def test_outputs(self, prepared):
        root, cfg = prepared
        code, out = _train(root, cfg, "t1", "--ablation", "freedom_0")
        assert code == 0
        res = json.loads((out / "results.json").read_text())
        assert set(res) == {"dataset", "config_hash", "R@10", "R@20", "N@10", "N@20", "best_epoch"}
        assert res["R@10"] > 0
        with open(out / "metrics.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "loss", "val_recall20", "val_ndcg20"]
        assert "lambda_modal=0.0" in (out / "config.txt").read_text()
        assert load_checkpoint(out / "checkpoint.frdm").dim == 16

    def test_byte_identical_rerun(self, prepared):
        root, cfg = prepared
        _, a = _train(root, cfg, "ra", "--seed", "4")
        _, b = _train(root, cfg, "rb", "--seed", "4")
        for name in ("metrics.csv", "results.json", "checkpoint.frdm"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_eval_reproduces_test_metrics(self, prepared):
        root, cfg = prepared
        _, out = _train(root, cfg, "ev")
        trained = json.loads((out / "results.json").read_text())
        assert main(["eval", "--config", str(cfg), "--out", str(out / "e"),
                     "--checkpoint", str(out / "checkpoint.frdm")]) == 0
        evald = json.loads((out / "e" / "results.json").read_text())
        for k in ("R@10", "R@20", "N@10", "N@20"):
            assert evald[k] == trained[k]

    def test_missing_features_exit_code(self, tmp_path, prepared):
        root, _ = prepared
        cfg = tmp_path / "c.cfg"
        cfg.write_text(f"data_dir={tmp_path}\n")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_bad_value_exit_code(self, prepared, tmp_path):
        root, cfg = prepared
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path), "--set", "rho=1.5"]) == 2


class TestSpectral:
    def test_identical_rows_equal_columns(self, tmp_path):
        x = np.tile([0.2, 0.7], (15, 1))
        write_fmat(tmp_path / "visual.fmat", x)
        write_fmat(tmp_path / "textual.fmat", x)
        assert main(["spectral", "--set", f"data_dir={tmp_path}", "--out", str(tmp_path / "s")]) == 0
        with open(tmp_path / "s" / "spectral.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[1][2:] == rows[2][2:]
        assert json.loads((tmp_path / "s" / "spectral.json").read_text())["k"] == 10

    def test_random_sweep(self, tmp_path):
        assert main(["spectral", "--out", str(tmp_path), "--random-trials", "5", "--n-items", "40"]) == 0
        with open(tmp_path / "spectral_sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 5
        assert all(r["chain_frozen"] == r["chain_weighted"] == r["max_elem_order"] == "1" for r in rows)
