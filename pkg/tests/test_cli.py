import hashlib
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from stochrb.cli import main
from stochrb.config import ValidationError, build_spec, parse_config_text
from stochrb.outputs import read_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMALL = CONFIGS / "finite_pr_small.cfg"


def checksums(out):
    """sha256 of every result file (checkpoints excluded)."""
    out = Path(out)
    return {str(p.relative_to(out)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(out.rglob("*")) if p.is_file() and "checkpoint" not in p.parts}


def write_cfg(tmp_path, text, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_rerun_is_bitwise_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(SMALL), "--output", str(a)]) == 0
    assert main(["run", "--config", str(SMALL), "--output", str(b), "--threads", "2"]) == 0
    ca = checksums(a)
    assert any(k.endswith("trajectory.csv") for k in ca)
    assert ca == checksums(b)


def test_resume_is_bitwise_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(SMALL), "--output", str(a)]) == 0
    assert main(["run", "--config", str(SMALL), "--output", str(b), "--stop-after", "37"]) == 0
    assert not (b / "summary.json").exists()
    assert main(["resume", "--config", str(SMALL), "--output", str(b)]) == 0
    assert checksums(a) == checksums(b)


def test_resume_refuses_changed_parameters(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", "--config", str(SMALL), "--output", str(out), "--stop-after", "20"]) == 0
    changed = write_cfg(tmp_path, SMALL.read_text().replace("ra = 2000", "ra = 2100"))
    assert main(["resume", "--config", changed, "--output", str(out)]) == 2
    assert "parameters changed" in capsys.readouterr().err


def test_resume_refuses_corrupt_checkpoint(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", "--config", str(SMALL), "--output", str(out), "--stop-after", "20"]) == 0
    snap = next((out / "checkpoint").glob("*_theta.bfld"))
    data = bytearray(snap.read_bytes())
    data[:4] = b"JUNK"
    snap.write_bytes(bytes(data))
    assert main(["resume", "--config", str(SMALL), "--output", str(out)]) == 2
    assert "corrupt" in capsys.readouterr().err


def test_resume_refuses_other_format_version(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", "--config", str(SMALL), "--output", str(out), "--stop-after", "20"]) == 0
    rec = out / "checkpoint" / "m0000.json"
    d = json.loads(rec.read_text())
    d["format"] = 99
    rec.write_text(json.dumps(d))
    assert main(["resume", "--config", str(SMALL), "--output", str(out)]) == 2
    assert "format version 99" in capsys.readouterr().err


def test_validation_lists_every_problem(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "kind = run_finite_pr\nra = -1\nnx = 12\nmembers = 0\n")
    assert main(["run", "--config", cfg, "--output", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "ra must be > 0" in err and "nx must be a power of two" in err and "members" in err


def test_config_parser_errors():
    with pytest.raises(ValidationError) as ei:
        parse_config_text("kind = couple\nbogus = 1\nkind = couple\nra 3\n")
    msg = str(ei.value)
    assert "unknown key 'bogus'" in msg and "duplicate key 'kind'" in msg and "line 4" in msg
    with pytest.raises(ValidationError, match="not representable"):
        build_spec({"kind": "couple", "n2": 4, "n2_nudge": 6, "lambda2": 1.0})
    with pytest.raises(ValidationError, match="members >= 100"):
        build_spec({"kind": "martingale_test", "members": 10})


def test_spec_hash_ignores_threads_and_output():
    a = build_spec({"kind": "run_finite_pr"}, {"threads": 3, "output_dir": "x"})
    b = build_spec({"kind": "run_finite_pr"})
    c = build_spec({"kind": "run_finite_pr", "ra": 1001.0})
    assert a.spec_hash == b.spec_hash != c.spec_hash


def test_numerical_failure_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL.read_text().replace("dt = 2e-4", "dt = 0.2")
                    .replace("t_end = 0.04", "t_end = 2"))
    assert main(["run", "--config", cfg, "--output", str(tmp_path / "o")]) == 3
    assert "CFL" in capsys.readouterr().err


def test_subcommand_kind_mismatch(tmp_path):
    assert main(["couple", "--config", str(SMALL), "--output", str(tmp_path / "o")]) == 2


def test_sweep_writes_one_row_per_point(tmp_path):
    cfg = write_cfg(tmp_path, """kind = nusselt_sweep
pr = inf
sweep_ra = 50, 100, 200
sweep_ra_tilde = 2, 2, 2
nx = 16
nz = 17
dt = 1e-3
t_end = 0.2
burn_in = 0.05
n2 = 4
sample_every = 1
""")
    out = tmp_path / "s"
    assert main(["nusselt-sweep", "--config", cfg, "--output", str(out)]) == 0
    meta, rows = read_csv(out / "sweep.csv")
    assert len(rows) == 3 and "spec_hash" in meta
    assert [r["ra"] for r in rows] == [50.0, 100.0, 200.0]


def test_module_entry_point_and_report(tmp_path):
    out = tmp_path / "o"
    env = dict(os.environ)
    r = subprocess.run([sys.executable, "-m", "stochrb", "run", "--config", str(SMALL),
                        "--output", str(out), "--members", "1"], capture_output=True, text=True, env=env)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "stochrb", "report", "--config", str(SMALL),
                        "--output", str(out)], capture_output=True, text=True, env=env)
    assert r.returncode == 0 and "spec_hash" in r.stdout
