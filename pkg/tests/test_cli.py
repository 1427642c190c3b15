import copy
import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from odoheom import bath as b
from odoheom import cli
from odoheom.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SZ_JSON = [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [-1.0, 0.0]]]


def small_dephasing(out_dir):
    cfg = json.loads((CONFIGS / "dephasing.json").read_text())
    cfg["decomposition"]["terms"] = 2
    cfg["hierarchy"]["tier"] = 3
    cfg["propagation"].update(t_final=2.0, snapshots=11)
    cfg["output"]["dir"] = str(out_dir)
    return cfg


def write(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def read_csv(path):
    raw = Path(path).read_bytes()
    rows = list(csv.reader(io.StringIO(raw.decode("utf-8"), newline="")))
    return raw, rows[0], np.array(rows[1:], dtype=float)


def test_run_writes_csv_and_manifest(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", write(tmp_path, small_dephasing(out))]) == 0
    raw, header, data = read_csv(out / "trajectory.csv")
    assert b"\r\n" in raw
    assert header == ["t", "rho_00_re", "rho_00_im", "rho_11_re", "rho_11_im",
                      "rho_01_re", "rho_01_im", "trace", "purity"]
    t = data[:, 0]
    assert t[0] == 0.0 and t[-1] == 2.0 and np.all(np.diff(t) > 0)
    assert np.allclose(data[:, header.index("trace")], 1.0, atol=1e-8)
    # populations are conserved under pure dephasing
    assert np.allclose(data[:, 1], 0.5, atol=1e-9)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["hierarchy"]["count"] > 1
    assert manifest["max_trace_drift"] <= 1e-8
    assert "max_residual" in manifest["decomposition"]["report"]
    assert manifest["wall_time"] > 0


def test_csv_uses_full_precision(tmp_path):
    out = tmp_path / "out"
    cli.main(["run", write(tmp_path, small_dephasing(out))])
    _, _, data = read_csv(out / "trajectory.csv")
    lines = (out / "trajectory.csv").read_text().splitlines()
    # values round-trip: re-reading and re-formatting reproduces the text
    for line, row in zip(lines[1:], data):
        assert line.split(",") == [cli._fmt(x) for x in row]


def test_negative_tier_names_the_field(tmp_path, capsys):
    cfg = small_dephasing(tmp_path / "out")
    cfg["truncation"] = cfg.pop("hierarchy")
    cfg["truncation"]["tier"] = -1
    assert cli.main(["run", write(tmp_path, cfg)]) == 2
    assert "truncation.tier" in capsys.readouterr().err


@pytest.mark.parametrize("mutate, field", [
    (lambda c: c.update(extra=1), "extra"),
    (lambda c: c["bath"].update(model="lorentzian"), "bath.model"),
    (lambda c: c["bath"]["params"].pop("gamma"), "bath.params.gamma"),
    (lambda c: c["bath"].update(beta=-1.0), "bath.beta"),
    (lambda c: c["decomposition"].update(method="fourier"), "decomposition.method"),
    (lambda c: c["hierarchy"].update(side="both"), "hierarchy.side"),
    (lambda c: c["propagation"].update(method="rk4"), "propagation.dt"),
    (lambda c: c["system"].update(h_s=[[1, 0]]), "system.h_s"),
    (lambda c: c["system"].update(rho0=SZ_JSON), "system.rho0"),
    (lambda c: c.update(observables=["entropy"]), "observables[0]"),
    (lambda c: c["propagation"].update(snapshots=1), "propagation.snapshots"),
])
def test_invalid_configs_are_rejected(tmp_path, mutate, field):
    cfg = small_dephasing(tmp_path / "out")
    mutate(cfg)
    with pytest.raises(ConfigError) as info:
        cli.parse_config(cfg)
    assert info.value.field == field
    assert cli.main(["run", write(tmp_path, cfg)]) == 2


def test_missing_file_exits_2(tmp_path):
    assert cli.main(["run", str(tmp_path / "nope.json")]) == 2


def test_decompose_pade_prints_k_plus_one_terms(tmp_path, capsys):
    cfg = {"bath": {"model": "drude_lorentz", "params": {"lam": 0.25, "gamma": 1.0}, "beta": 1.0},
           "decomposition": {"method": "pade", "terms": 4}}
    assert cli.main(["decompose", write(tmp_path, cfg)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["terms"]) == 5
    assert out["report"]["max_residual"] > 0


def test_decompose_prony_from_samples(tmp_path, capsys):
    t = np.linspace(0, 10, 200)
    c = b.correlation_function_many(b.BrownianOscillator(0.3, 1.2, 0.6), b.BathThermalState(1.0), t)
    np.savetxt(tmp_path / "samples.csv", np.column_stack([t, c.real, c.imag]), delimiter=",")
    cfg = {"bath": {"model": "brownian_oscillator", "params": {"lam": 0.3, "w0": 1.2, "zeta": 0.6},
                    "beta": 1.0},
           "decomposition": {"method": "prony", "terms": 6, "samples_file": "samples.csv"}}
    assert cli.main(["decompose", write(tmp_path, cfg)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert "max_residual" in out["report"]
    assert out["report"]["max_residual"] < 1e-3


def test_decompose_unsupported_model_exits_2(tmp_path):
    cfg = {"bath": {"model": "ohmic_exponential", "params": {"alpha": 0.1, "s": 1.0, "wc": 2.0},
                    "beta": 1.0},
           "decomposition": {"method": "pade", "terms": 4}}
    assert cli.main(["decompose", write(tmp_path, cfg)]) == 2


def test_capacity_exits_4(tmp_path):
    cfg = small_dephasing(tmp_path / "out")
    cfg["hierarchy"].update(tier=30, memory_budget_bytes=100_000)
    assert cli.main(["run", write(tmp_path, cfg)]) == 4


def test_step_limit_exits_3(tmp_path):
    cfg = small_dephasing(tmp_path / "out")
    cfg["propagation"]["max_steps"] = 2
    assert cli.main(["run", write(tmp_path, cfg)]) == 3


def test_correlated_moment_columns(tmp_path):
    out = tmp_path / "out"
    cfg = small_dephasing(out)
    cfg["observables"] = ["f_q", "f2"]
    assert cli.main(["run", write(tmp_path, cfg)]) == 0
    _, header, data = read_csv(out / "trajectory.csv")
    assert header == ["t", "f_q_re", "f_q_im", "f2_re", "f2_im"]
    assert data[0, 1] == 0.0


def test_discrete_double_run(tmp_path):
    out = tmp_path / "out"
    cfg = copy.deepcopy(json.loads((CONFIGS / "spin_boson_benchmark.json").read_text()))
    cfg["hierarchy"]["tier"] = 4
    cfg["propagation"].update(t_final=1.0, snapshots=3)
    cfg["output"]["dir"] = str(out)
    assert cli.main(["run", write(tmp_path, cfg)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["hierarchy"]["generator"] == "discrete-double"
    assert manifest["decomposition"]["report"]["max_residual"] == 0.0


def test_quadratic_config(tmp_path):
    out = tmp_path / "out"
    cfg = small_dephasing(out)
    cfg["system"]["couplings"] = {"q1": SZ_JSON, "q2": SZ_JSON, "alpha1": 1.0, "alpha2": 0.05}
    assert cli.main(["run", write(tmp_path, cfg)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["hierarchy"]["generator"] == "quadratic"
    cfg["hierarchy"]["side"] = "double"
    assert cli.main(["run", write(tmp_path, cfg)]) == 2
