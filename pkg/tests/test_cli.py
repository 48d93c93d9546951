import csv
import json

import pytest

from sclab.cli import main
from sclab.config import ConfigError, parse_config
from sclab.experiments import evaluate, run_experiment, summary_lines

SMALL = ["--cells", "40", "--R", "6", "--t_end", "0.3", "--clamp", "3", "--threads", "1"]


def _run(tmp_path, *args):
    out = tmp_path / "run"
    code = main([*args, "--out", str(out)])
    return code, out


def test_minimal_file_takes_defaults(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"kind": "simulate"}))
    cfg = parse_config(f)
    assert cfg.cells == 200 and cfg.K == 8 and cfg.R == 100 and cfg.t_end == 1.0


def test_flag_overrides_file_seed(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"kind": "validate-hypotheses", "seed": 7}))
    code, out = _run(tmp_path, "--config", str(f), "--seed=42")
    assert code == 0
    assert json.loads((out / "resolved_config.json").read_text())["seed"] == 42


def test_typo_flag_suggests_key(tmp_path, capsys):
    code, _ = _run(tmp_path, "--qO", "2")
    assert code == 2
    assert "did you mean 'q0'" in capsys.readouterr().err


def test_unknown_key_in_file(tmp_path):
    with pytest.raises(ConfigError, match="did you mean 'cells'"):
        parse_config({"kind": "simulate", "cels": 10})


def test_t_end_before_s_is_config_error(tmp_path):
    code, out = _run(tmp_path, "--kind", "simulate", "--s", "1", "--t_end", "0.5")
    assert code == 2
    assert not out.exists()


def test_dt_not_multiple_of_delta(tmp_path):
    code, _ = _run(tmp_path, "--kind", "simulate", "--dt", "0.003", "--delta", "0.002")
    assert code == 2


def test_validate_hypotheses_reports_coercivity(tmp_path, capsys):
    code, out = _run(tmp_path, "--kind", "validate-hypotheses")
    assert code == 0
    rows = list(csv.DictReader((out / "hypotheses.csv").open()))
    coer = next(float(r["value"]) for r in rows if r["quantity"] == "coercivity_empirical")
    assert coer >= 0.25 - 1e-12
    assert "RESULT: PASS" in capsys.readouterr().out


def test_deterministic_contraction_passes(tmp_path):
    code, out = _run(tmp_path, "--kind", "contraction", "--noise", "false", "--pairs", "3",
                     "--cells", "50", "--clamp", "1", "--t_end", "0.2")
    assert code == 0
    assert (out / "contraction.csv").exists()


def test_resolved_config_and_seed_columns(tmp_path):
    code, out = _run(tmp_path, "--kind", "contraction", *SMALL)
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["cells"] == 40 and resolved["R"] == 6
    csvs = sorted(out.glob("*.csv"))
    assert csvs
    for p in csvs:
        header = p.read_text().splitlines()[0].split(",")
        assert "seed" in header, p.name


@pytest.mark.parametrize("kind", ["contraction", "supercontraction", "invariant"])
def test_verdicts_recomputed_from_csv(tmp_path, kind):
    cfg = parse_config({"kind": kind, "cells": 40, "R": 6, "t_end": 0.3, "clamp": 3.0,
                        "s_list": [-0.2, -0.4, -0.8], "out": str(tmp_path / kind)})
    result = run_experiment(cfg)
    again = summary_lines(cfg, evaluate(cfg), result.abort)
    assert (tmp_path / kind / "summary.txt").read_text().splitlines() == again


def test_thread_count_gives_identical_files(tmp_path):
    outs = []
    for t in (1, 3):
        out = tmp_path / f"t{t}"
        main(["--kind", "contraction", *SMALL[:-2], "--threads", str(t), "--out", str(out)])
        outs.append(out)
    names = sorted(p.name for p in outs[0].glob("*.csv"))
    assert names == sorted(p.name for p in outs[1].glob("*.csv"))
    for n in names:
        assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes(), n


def test_clamp_event_aborts_with_code_3(tmp_path, capsys):
    code, out = _run(tmp_path, "--kind", "contraction", "--cells", "40", "--R", "4",
                     "--t_end", "0.5", "--clamp", "1.05", "--coef_ratio", "0.9")
    assert code == 3
    assert "RESULT: ABORT" in (out / "summary.txt").read_text()
