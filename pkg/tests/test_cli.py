import json
from pathlib import Path

import pytest

from parkinglab.cli import EXIT_AUDIT, EXIT_CONFIG, EXIT_OK, main
from parkinglab.config import ConfigError, load_config


def write_config(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "exp.ini"
    path.write_text(text)
    return path


TAU_CFG = """
[experiment]
kind = tau_tail
reps = 2000
seed = 99

[model]
d = 1
p = 0.3
domain = box

[grid]
t = 0 1 2 4 8 16

[output]
dir = {out}
"""


def test_load_config_roundtrip(tmp_path):
    cfg = load_config(write_config(tmp_path, TAU_CFG.format(out=tmp_path / "res")))
    assert cfg.kind == "tau_tail"
    assert cfg.params.d == 1 and cfg.params.p == 0.3 and cfg.params.seed == 99
    assert cfg.t_grid == (0, 1, 2, 4, 8, 16)
    assert cfg.params.domain.radius == 32  # defaulted to 2 * max(t)


def test_validation_failures(tmp_path):
    bad = TAU_CFG.replace("kind = tau_tail", "kind = nonsense")
    with pytest.raises(ConfigError, match="kind"):
        load_config(write_config(tmp_path, bad.format(out=tmp_path)))

    dual_box = TAU_CFG.replace("kind = tau_tail", "kind = duality").replace("t = 0 1 2 4 8 16", "t = 10")
    with pytest.raises(ConfigError, match="torus"):
        load_config(write_config(tmp_path, dual_box.format(out=tmp_path)))

    few = TAU_CFG.replace("reps = 2000", "reps = 10")
    with pytest.raises(ConfigError, match="reps"):
        load_config(write_config(tmp_path, few.format(out=tmp_path)))

    sigma_low_p = TAU_CFG.replace("kind = tau_tail", "kind = sigma_tail")
    with pytest.raises(ConfigError, match="supercritical"):
        load_config(write_config(tmp_path, sigma_low_p.format(out=tmp_path)))


def test_cli_exit_codes(tmp_path):
    cfg = write_config(tmp_path, TAU_CFG.format(out=tmp_path / "res"))
    assert main(["--config", str(cfg)]) == EXIT_OK
    assert main(["--config", str(tmp_path / "missing.ini")]) == EXIT_CONFIG


def test_cli_outputs_deterministic(tmp_path):
    cfg = write_config(tmp_path, TAU_CFG.format(out=tmp_path / "a"))
    assert main(["--config", str(cfg), "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["--config", str(cfg), "--out", str(tmp_path / "b")]) == EXIT_OK
    csv_a = (tmp_path / "a" / "curve.csv").read_bytes()
    csv_b = (tmp_path / "b" / "curve.csv").read_bytes()
    assert csv_a == csv_b
    fit_a = (tmp_path / "a" / "fit.json").read_bytes()
    assert fit_a == (tmp_path / "b" / "fit.json").read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    assert manifest["config"]["model"]["seed"] == 99
    assert "curve.csv" in manifest["files"]


def test_cli_seed_override_changes_results(tmp_path):
    cfg = write_config(tmp_path, TAU_CFG.format(out=tmp_path / "a"))
    main(["--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "123"])
    assert (tmp_path / "a" / "curve.csv").read_bytes() != (tmp_path / "b" / "curve.csv").read_bytes()
    manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert manifest["config"]["model"]["seed"] == 123


DUALITY_CFG = """
[experiment]
kind = duality
reps = 5000
seed = 7

[model]
d = 1
p = 0.3
domain = torus
side = 31

[grid]
t = 10

[output]
dir = {out}
"""


def test_cli_duality(tmp_path):
    cfg = write_config(tmp_path, DUALITY_CFG.format(out=tmp_path / "res"))
    assert main(["--config", str(cfg)]) == EXIT_OK
    payload = json.loads((tmp_path / "res" / "duality.json").read_text())
    assert abs(payload["z"]) < 3
    assert payload["passed"]


SPECTRAL_CFG = """
[experiment]
kind = spectral_audit
seed = 0

[model]
d = 2
p = 0.1
domain = box
radius = 4

[grid]
t = 1 5 10

[options]
n_max = 4

[output]
dir = {out}
"""


def test_cli_spectral_audit(tmp_path):
    cfg = write_config(tmp_path, SPECTRAL_CFG.format(out=tmp_path / "res"))
    assert main(["--config", str(cfg)]) == EXIT_OK
    payload = json.loads((tmp_path / "res" / "spectral_audit.json").read_text())
    assert payload["checked"] == (1 + 4 + 18 + 76) * 3
    assert payload["failures"] == 0
    lines = (tmp_path / "res" / "sandwich.jsonl").read_text().strip().splitlines()
    assert len(lines) == payload["checked"]
    rec = json.loads(lines[0])
    assert {"H_size", "t", "survival", "alpha", "lower", "upper"} <= set(rec)


PROBE_CFG = """
[experiment]
kind = lower_bound_probe
reps = 20000
seed = 5

[model]
d = 1
p = 0.5
domain = box
radius = 16

[grid]
t = 4 8

[output]
dir = {out}
"""


def test_cli_probe(tmp_path):
    cfg = write_config(tmp_path, PROBE_CFG.format(out=tmp_path / "res"))
    assert main(["--config", str(cfg)]) == EXIT_OK
    body = (tmp_path / "res" / "probe.csv").read_text()
    assert "probe_hat" in body


D1_CFG = """
[experiment]
kind = d1_labels
reps = 200
seed = 11

[model]
d = 1
p = 0.7
domain = box
radius = 64

[grid]
t = 24

[options]
window = 48
r_max = 8

[output]
dir = {out}
"""


def test_cli_d1_labels(tmp_path):
    cfg = write_config(tmp_path, D1_CFG.format(out=tmp_path / "res"))
    assert main(["--config", str(cfg)]) == EXIT_OK
    payload = json.loads((tmp_path / "res" / "d1_labels.json").read_text())
    assert payload["leftward_violations"] == 0
    assert payload["transfers"] > 0
    assert (tmp_path / "res" / "repair_log.jsonl").exists()


UNION_CFG = """
[experiment]
kind = union_bound
reps = 20000
seed = 3

[model]
d = 1
p = 0.2
domain = box
radius = 32

[grid]
t = 4 8 16

[options]
j_cap = 8

[output]
dir = {out}
"""


def test_cli_union_bound_and_animals_table(tmp_path):
    cfg = write_config(tmp_path, UNION_CFG.format(out=tmp_path / "res"))
    assert main(["--config", str(cfg)]) == EXIT_OK
    animals = (tmp_path / "res" / "animals.csv").read_text().splitlines()
    header_idx = next(i for i, line in enumerate(animals) if not line.startswith("#"))
    assert animals[header_idx] == "j,count,bound_term,survival_max"
    data = [line.split(",") for line in animals[header_idx + 1 :]]
    assert [int(row[0]) for row in data] == list(range(2, 9))
    assert [int(row[1]) for row in data] == list(range(2, 9))  # d=1: j intervals
    bound = (tmp_path / "res" / "bound.csv").read_text()
    assert "enumerated_rhs" in bound


TOTAL_CFG = """
[experiment]
kind = total_visits
reps = 5000
seed = 21

[model]
d = 1
p = 0.15
domain = box
radius = 96

[options]
t_max = 48

[output]
dir = {out}
"""


def test_cli_total_visits(tmp_path):
    cfg = write_config(tmp_path, TOTAL_CFG.format(out=tmp_path / "res"))
    assert main(["--config", str(cfg)]) == EXIT_OK
    payload = json.loads((tmp_path / "res" / "total_visits.json").read_text())
    assert payload["lower_bound_ok"]


SIGMA_CFG = """
[experiment]
kind = sigma_tail
reps = 4000
seed = 8

[model]
d = 1
p = 0.7
domain = box
radius = 128

[grid]
t = 0 4 8 16 32 64

[output]
dir = {out}
"""


def test_cli_sigma_tail(tmp_path):
    cfg = write_config(tmp_path, SIGMA_CFG.format(out=tmp_path / "res"))
    assert main(["--config", str(cfg)]) == EXIT_OK
    body = (tmp_path / "res" / "curve.csv").read_text()
    assert "p_hat" in body


BUSY_CFG = """
[experiment]
kind = busy_audit
reps = 30000
seed = 17

[model]
d = 1
p = 0.4
domain = box
radius = 24

[grid]
t = 12

[options]
conditioned = 100

[output]
dir = {out}
"""


def test_cli_busy_audit(tmp_path):
    cfg = write_config(tmp_path, BUSY_CFG.format(out=tmp_path / "res"))
    assert main(["--config", str(cfg)]) == EXIT_OK
    payload = json.loads((tmp_path / "res" / "busy_audit.json").read_text())
    assert payload["certificates_checked"] == 100
    assert payload["violations"] == 0


def test_cli_p0_gate_warning(tmp_path, capsys):
    # p above the union-bound threshold triggers the gate warning
    warn_cfg = TAU_CFG.replace("d = 1", "d = 2").replace("p = 0.3", "p = 0.1")
    cfg = write_config(tmp_path, warn_cfg.format(out=tmp_path / "res"))
    assert main(["--config", str(cfg)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "p0(2)" in out and "warning" in out


def test_cli_runtime_failure_writes_manifest(tmp_path, monkeypatch):
    from parkinglab import cli as cli_mod

    def boom(cfg):
        raise RuntimeError("worker exploded")

    monkeypatch.setitem(cli_mod.RUNNERS, "tau_tail", boom)
    cfg = write_config(tmp_path, TAU_CFG.format(out=tmp_path / "res"))
    assert main(["--config", str(cfg)]) == 2
    manifest = json.loads((tmp_path / "res" / "manifest.json").read_text())
    assert manifest["status"].startswith("failed")
    assert manifest["audit_ok"] is False


def test_cli_reference_performance_budget(tmp_path):
    # reps = 1e4, t <= 256 completes far inside the five-minute budget
    import time

    perf = TAU_CFG.replace("reps = 2000", "reps = 10000").replace(
        "t = 0 1 2 4 8 16", "t = 4 16 64 256"
    )
    cfg = write_config(tmp_path, perf.format(out=tmp_path / "res"))
    t0 = time.time()
    assert main(["--config", str(cfg)]) == EXIT_OK
    assert time.time() - t0 < 300
