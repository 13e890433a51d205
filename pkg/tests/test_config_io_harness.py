import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lobsim import harness
from lobsim.cli import main
from lobsim.config import load_config, parse_config
from lobsim.engine import simulate_path
from lobsim.errors import ParseError, ValidationError
from lobsim.grid import StepField, kernel_weights
from lobsim.io import (
    read_book,
    read_csv_table,
    read_varint,
    unzigzag,
    write_book,
    write_path_csv,
    write_varint,
    zigzag,
)
from lobsim.model import Kernel, default_model


def _paths(err):
    return [p for p, _ in err.value.errors]


def test_minimal_config_fills_defaults():
    cfg = parse_config({"run": {"n_list": [16, 64]}})
    assert cfg.run.n_list == (16, 64) and cfg.run.T == 1.0 and cfg.run.snapshots == (0.0, 1.0)
    assert cfg.limit.replications == cfg.run.replications == 1
    assert cfg.limit.dt == pytest.approx(1 / 2048)
    assert cfg.model.flow.M == 1.0
    assert cfg.hash == parse_config({"run": {"n_list": [16, 64]}}).hash != parse_config(None).hash


def test_snapshot_count_expands():
    assert parse_config({"run": {"T": 2.0, "snapshots": 4}}).run.snapshots == (0.0, 0.5, 1.0, 1.5, 2.0)


def test_cancel_proportion_out_of_range_names_field():
    bad = {"model": {"flow": {"bid": {"cancel": {"size": {"family": "uniform", "low": 0.0, "high": 1.5}}}}}}
    with pytest.raises(ValidationError) as err:
        parse_config(bad)
    assert "model.flow.bid.cancel.size" in _paths(err)


def test_zero_scale_index_rejected():
    with pytest.raises(ValidationError) as err:
        parse_config({"run": {"n_list": [16, 0]}})
    assert _paths(err) == ["run.n_list[1]"]


def test_all_problems_reported_together():
    with pytest.raises(ValidationError) as err:
        parse_config({"run": {"T": -1, "replications": 0}, "sweep": {"alpha": 2}, "bogus": {}})
    assert {"run.T", "run.replications", "sweep.alpha", "bogus"} <= set(_paths(err))


def test_family_switch_drops_default_params():
    cfg = parse_config({"model": {"flow": {"bid": {"noise": {"size": {"family": "constant", "value": 2.0}}}}}})
    assert cfg.model.flow.bid.noise.size.mean == 2.0
    with pytest.raises(ValidationError) as err:
        parse_config({"model": {"flow": {"bid": {"noise": {"size": {"family": "lognormal"}}}}}})
    assert "model.flow.bid.noise.size.family" in _paths(err)


def test_load_config_errors(tmp_path):
    with pytest.raises(ParseError):
        load_config(tmp_path / "missing.yaml")
    p = tmp_path / "broken.yaml"
    p.write_text("run: [1, 2\n")
    with pytest.raises(ParseError):
        load_config(p)
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ParseError):
        load_config(p)
    p.write_text("run:\n  n_list: [32]\n  replications: 3\n")
    assert load_config(p).run.replications == 3


@given(st.integers(-(2**62), 2**62))
def test_zigzag_varint_roundtrip(i):
    z = zigzag(i)
    assert z >= 0 and unzigzag(z) == i
    buf = io.BytesIO()
    write_varint(buf, z)
    assert len(buf.getvalue()) == max(1, -(-z.bit_length() // 7))
    buf.seek(0)
    assert read_varint(buf) == z


def test_zigzag_examples():
    assert [zigzag(i) for i in (0, -1, 1, -2, 2)] == [0, 1, 2, 3, 4]
    with pytest.raises(EOFError):
        read_varint(io.BytesIO(b"\x80"))


def test_book_and_csv_roundtrip(tmp_path):
    rec = simulate_path(default_model(), 16, 4, 1.0, [0.0, 0.5, 1.0])
    write_book(rec, tmp_path / "p.book", "abc")
    meta, snaps = read_book(tmp_path / "p.book")
    assert meta["n"] == 16 and meta["config"] == "abc" and len(snaps) == 3
    for (t, sides), s in zip(snaps, rec.snapshots):
        assert t == s.t
        for side in ("bid", "ask"):
            ticks, vals = s.field(side).sparse_items()
            assert np.array_equal(sides[side][0], ticks) and np.array_equal(sides[side][1], vals)
    write_path_csv(rec, tmp_path / "p.csv")
    meta, cols = read_csv_table(tmp_path / "p.csv")
    assert meta["schema"] == "lobsim.path/1" and meta["n"] == "16"
    assert cols["A"].tolist() == [s.A for s in rec.snapshots]
    (tmp_path / "x.book").write_bytes(b"nope")
    with pytest.raises(ParseError):
        read_book(tmp_path / "x.book")


def test_step_field_basics():
    f = StepField(0.5, lambda x: x, 0, 3)
    assert f.get(2) == 1.25 and f.get(-10) == -4.75  # untouched ticks read the initial profile
    f.set(10, 7.0)
    assert f.end >= 10 and f.get(10) == 7.0 and f.get(9) == 4.75
    assert f.sparse_items()[0].tolist() == [10]
    g = f.copy()
    g.set(0, 99.0)
    assert f.get(0) == 0.25
    assert f.pair(np.array([1.0, 2.0]), 1) == pytest.approx(0.75 + 2 * 1.25)
    assert StepField(0.5, lambda x: np.ones_like(x), 0, 3).l2_sq() == pytest.approx(2.0)


def test_kernel_weights_cover_support():
    k = Kernel("bump", center=0.0, width=0.25, radius=0.75)
    first, w = kernel_weights(k, 0.1)
    x = (first + np.arange(w.size) + 0.5) * 0.1
    assert np.allclose(w, k(x) * 0.1)
    assert k(x[0] - 0.1) == 0.0 and k(x[-1] + 0.1) == 0.0


@pytest.fixture
def small_cfg():
    return parse_config({"run": {"n_list": [16], "replications": 2, "seed": 3, "snapshots": 2}})


def test_simulate_writes_bundles_and_manifest(tmp_path, small_cfg):
    man = harness.run_experiment(small_cfg, "simulate", tmp_path / "a", jobs=1)
    assert man.status == "complete"
    names = sorted(man.files)
    assert names == ["config.json", "path_n16_r0.book", "path_n16_r0.csv", "path_n16_r1.book", "path_n16_r1.csv"]
    on_disk = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert on_disk["files"] == man.files and len(on_disk["tasks"]) == 2
    again = harness.run_experiment(small_cfg, "simulate", tmp_path / "b", jobs=1)
    assert again.files == man.files


def test_manifest_stays_incomplete_after_crash(tmp_path, small_cfg, monkeypatch):
    calls = []

    def boom(args):
        if calls:
            raise RuntimeError("worker died")
        calls.append(args)
        return real(args)

    real = harness._simulate_task
    monkeypatch.setattr(harness, "_simulate_task", boom)
    with pytest.raises(RuntimeError):
        harness.run_experiment(small_cfg, "simulate", tmp_path, jobs=1)
    man = harness.RunManifest.read(tmp_path / "manifest.json")
    assert man.status == "incomplete" and man.finished is None
    assert "path_n16_r0.csv" in man.files and "path_n16_r1.csv" not in man.files


def test_decompose_verifies_bundles(tmp_path, small_cfg):
    harness.run_experiment(small_cfg, "simulate", tmp_path / "sim", jobs=1)
    books = sorted((tmp_path / "sim").glob("*.book"))
    man = harness.run_experiment(small_cfg, "decompose", tmp_path / "dec", jobs=1, inputs=books)
    meta, cols = read_csv_table(tmp_path / "dec" / "decomp_n16_r0.csv")
    assert float(meta["reconstruction_error"]) <= 1e-9
    assert cols["u"][0] == 0.0 and np.all(cols["bid_V1_l2sq"] >= 0)
    assert man.status == "complete"
    other = parse_config({"run": {"n_list": [16], "replications": 2, "seed": 4, "snapshots": 2}})
    from lobsim.errors import SeedMismatch

    with pytest.raises(SeedMismatch):
        harness.run_experiment(other, "decompose", tmp_path / "bad", jobs=1, inputs=books)


def test_unknown_mode(tmp_path, small_cfg):
    with pytest.raises(ValueError):
        harness.run_experiment(small_cfg, "plot", tmp_path)


@pytest.mark.slow
def test_sweep_mode_small(tmp_path):
    cfg = parse_config({"run": {"n_list": [16, 32], "replications": 10, "snapshots": [1.0]},
                        "sweep": {"bootstrap": 50}, "limit": {"dt": 1 / 256}})
    man = harness.run_experiment(cfg, "sweep", tmp_path, jobs=1)
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["n_list"] == [16, 32] and rep["R"] == 10
    assert man.verdict["tests"] == len(rep["quantities"])
    assert read_csv_table(tmp_path / "ks.csv")[1]["ks"].size == 2 * len(rep["quantities"])
    code = main(["sweep", "--n", "16,32", "-R", "10", "--snapshots", "1.0", "--jobs", "1", "--out", str(tmp_path / "c")])
    assert code == (0 if man.verdict["passed"] else 3)


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["validate"]) == 0
    assert "config ok" in capsys.readouterr().out
    bad = tmp_path / "bad.yaml"
    bad.write_text("run:\n  n_list: [0]\n")
    assert main(["validate", "--config", str(bad)]) == 2
    assert "run.n_list[0]" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "none.yaml"), "--out", str(tmp_path)]) == 1
    with pytest.raises(SystemExit):
        main(["simulate", "--n", "a,b"])


def test_cli_simulate_then_decompose(tmp_path, monkeypatch):
    monkeypatch.setenv("LOBSIM_OUT", str(tmp_path / "env"))
    assert main(["simulate", "--n", "16", "-R", "1", "--seed", "5", "--jobs", "1"]) == 0
    book = tmp_path / "env" / "path_n16_r0.book"
    assert book.exists()
    out = tmp_path / "dec"
    assert main(["decompose", "--n", "16", "-R", "1", "--seed", "5", "--jobs", "1", "--out", str(out),
                 "--input", str(book)]) == 0
    assert main(["decompose", "--n", "16", "-R", "1", "--seed", "6", "--jobs", "1", "--out", str(out),
                 "--input", str(book)]) == 1
