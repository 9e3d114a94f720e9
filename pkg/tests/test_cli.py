import json
from pathlib import Path

import numpy as np
import pytest

from funmix.cli import main
from funmix.config import ConfigError, default_config_text, load_config
from funmix.io import (
    DataFormatError,
    load_chain,
    load_long_table,
    load_truth,
    write_long_table,
)
from funmix.model import ModelDims
from funmix.simulate import simulate_dataset


def write_config(path: Path, **overrides) -> Path:
    base = {
        "basis": {"degree": 2, "n_interior": 3, "domain_min": 6.0, "domain_max": 14.0},
        "dims": {"k": 2, "m": 1},
        "sampler": {"n_iter": 40, "n_burnin": 20, "seed": 3},
        "simulate": {"n_subjects": 4, "n_channels": 2, "n_points": 10},
        "io": {
            "data": str(path.parent / "data.csv"),
            "truth": str(path.parent / "truth.json"),
            "output_dir": str(path.parent / "out"),
        },
    }
    for sec, kv in overrides.items():
        base.setdefault(sec, {}).update(kv)
    lines = []
    for sec, kv in base.items():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {v}" for k, v in kv.items())
    path.write_text("\n".join(lines) + "\n")
    return path


def test_load_long_table_happy_path(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text(
        "subject,channel,group,t,y\n"
        "s1,c2,g,0.1,1.0\n"
        "s1,c2,g,0.2,2.0\n"
        "s1,c2,g,0.3,3.0\n"
        "s1,c1,g,0.3,6.0\n"
        "s1,c1,g,0.1,4.0\n"
        "s1,c1,g,0.2,5.0\n"
    )
    data = load_long_table(p)
    assert data.N == 1 and data.J == 2 and data.n == (3,)
    assert data.channel_labels == ["c1", "c2"]  # lexicographic
    np.testing.assert_array_equal(data.grids[0], [0.1, 0.2, 0.3])
    np.testing.assert_array_equal(data.values[0][:, 0], [4.0, 5.0, 6.0])
    assert data.groups == ["g"]


def test_load_long_table_grid_mismatch_names_subject_and_channels(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text(
        "subject,channel,group,t,y\n"
        "s1,c1,,0.1,1.0\n"
        "s1,c1,,0.2,2.0\n"
        "s1,c2,,0.1,1.0\n"
        "s1,c2,,0.3,2.0\n"
    )
    with pytest.raises(DataFormatError, match="s1.*c1.*c2"):
        load_long_table(p)


def test_load_long_table_duplicate_key(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text(
        "subject,channel,group,t,y\n"
        "s1,c1,,0.1,1.0\n"
        "s1,c1,,0.1,2.0\n"
    )
    with pytest.raises(DataFormatError, match="duplicate"):
        load_long_table(p)


def test_load_long_table_non_numeric_reports_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text(
        "subject,channel,group,t,y\n"
        "s1,c1,,0.1,1.0\n"
        "s1,c1,,oops,2.0\n"
    )
    with pytest.raises(DataFormatError, match=":3:"):
        load_long_table(p)


def test_load_long_table_bad_header(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(DataFormatError, match="header"):
        load_long_table(p)


def test_round_trip_simulate_write_load(tmp_path):
    dims = ModelDims(N=3, J=2, K=2, M=1, P=6, n=(7,) * 3)
    data, _ = simulate_dataset(dims, "default", seed=1)
    p = tmp_path / "rt.csv"
    write_long_table(p, data)
    back = load_long_table(p)
    assert back.subject_ids == data.subject_ids
    assert back.channel_labels == data.channel_labels
    for a, b in zip(back.values, data.values):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(back.grids, data.grids):
        np.testing.assert_array_equal(a, b)


def test_print_config_parses_back(tmp_path, capsys):
    assert main(["print-config"]) == 0
    text = capsys.readouterr().out
    p = tmp_path / "cfg.ini"
    p.write_text(text)
    cfg = load_config(p)
    assert cfg.K == 2 and cfg.sampler.n_iter == 5000


def test_config_rejects_unknown_key(tmp_path):
    p = tmp_path / "cfg.ini"
    p.write_text("[sampler]\nn_itr = 10\n")
    with pytest.raises(ConfigError, match="n_itr"):
        load_config(p)
    p.write_text("[samplr]\nn_iter = 10\n")
    with pytest.raises(ConfigError, match="samplr"):
        load_config(p)


def test_config_default_text_lists_all_sections():
    text = default_config_text()
    for sec in ("[basis]", "[dims]", "[prior]", "[sampler]", "[simulate]", "[io]"):
        assert sec in text


def test_simulate_then_fit_then_summarize(tmp_path, capsys):
    cfg_path = write_config(tmp_path / "cfg.ini")
    assert main(["simulate", "--config", str(cfg_path)]) == 0
    assert (tmp_path / "data.csv").exists()
    assert (tmp_path / "truth.json").exists()
    truth = load_truth(tmp_path / "truth.json")
    assert truth.dims.N == 4

    assert main(["fit", "--config", str(cfg_path)]) == 0
    chain_dir = tmp_path / "out" / "chain01"
    assert chain_dir.exists()
    chain = load_chain(chain_dir)
    assert len(chain.draws) == 20
    manifest = json.loads((chain_dir / "manifest.json").read_text())
    assert manifest["n_draws"] == 20
    import csv

    with open(chain_dir / "nu.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header[:2] == ["draw", "nu[k=1,p=1]"]

    assert main(["summarize", "--config", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    assert "summary" in out
    assert (tmp_path / "out" / "summary" / "feature_means.csv").exists()
    assert (tmp_path / "out" / "summary" / "membership_subject.csv").exists()


def test_fit_k1_warns(tmp_path, capsys):
    cfg_path = write_config(tmp_path / "cfg.ini", dims={"k": 1, "m": 1})
    assert main(["simulate", "--config", str(cfg_path)]) == 0
    assert main(["fit", "--config", str(cfg_path)]) == 0
    err = capsys.readouterr().err
    assert "vacuous" in err


def test_fit_determinism_byte_identical(tmp_path):
    cfg_path = write_config(tmp_path / "cfg.ini")
    assert main(["simulate", "--config", str(cfg_path)]) == 0
    assert main(["fit", "--config", str(cfg_path)]) == 0
    first = {
        f.name: f.read_bytes() for f in sorted((tmp_path / "out" / "chain01").iterdir())
    }
    assert main(["fit", "--config", str(cfg_path)]) == 0
    second = {
        f.name: f.read_bytes() for f in sorted((tmp_path / "out" / "chain01").iterdir())
    }
    assert first.keys() == second.keys()
    for name in first:
        assert first[name] == second[name], name


def test_fit_chains_use_shifted_seeds(tmp_path):
    cfg_path = write_config(tmp_path / "cfg.ini")
    assert main(["simulate", "--config", str(cfg_path)]) == 0
    assert main(["fit", "--config", str(cfg_path), "--chains", "2"]) == 0
    c1 = load_chain(tmp_path / "out" / "chain01")
    c2 = load_chain(tmp_path / "out" / "chain02")
    assert c2.seed == c1.seed + 1
    assert not np.array_equal(c1.draws[-1].nu, c2.draws[-1].nu)


def test_select_k_single_candidate_writes_table_and_message(tmp_path, capsys):
    cfg_path = write_config(tmp_path / "cfg.ini")
    assert main(["simulate", "--config", str(cfg_path)]) == 0
    assert main(["select-k", "--config", str(cfg_path), "--k-list", "2"]) == 0
    captured = capsys.readouterr()
    assert "at least 3 candidate" in captured.err
    table = (tmp_path / "out" / "ic_table.csv").read_text().splitlines()
    assert table[0].startswith("K,loglik")
    assert len(table) == 2
    sel = json.loads((tmp_path / "out" / "ic_table_selection.json").read_text())
    assert sel["elbow_K"] is None
    # AIC/BIC arithmetic identities on the written row
    k, ll, p, aic, bic, dev = table[1].split(",")
    assert abs(float(aic) - (2 * int(p) - 2 * float(ll))) < 1e-8


def test_missing_data_file_is_clean_error(tmp_path, capsys):
    cfg_path = write_config(tmp_path / "cfg.ini")
    rc = main(["fit", "--config", str(cfg_path)])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_bad_config_returns_error_exit(tmp_path, capsys):
    p = tmp_path / "cfg.ini"
    p.write_text("[sampler]\nbogus = 1\n")
    rc = main(["fit", "--config", str(p)])
    assert rc == 2
    assert "bogus" in capsys.readouterr().err
