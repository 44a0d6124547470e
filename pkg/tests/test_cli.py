"""End-to-end command tests: exit codes, artifact formats, determinism."""

import csv
import json
import math
import os

import numpy as np
import pytest

from gllab.cli import main

LOG2 = math.log(2.0)


@pytest.fixture(autouse=True)
def _no_ambient_seed(monkeypatch):
    monkeypatch.delenv("GLLAB_SEED", raising=False)


def write_config(tmp_path, text, name="exp.toml"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


def read_csv(path):
    text = open(path, encoding="utf-8").read()
    lines = text.split("\n")
    assert lines[0].startswith("# run ")
    rows = list(csv.reader(lines[1:]))
    rows = [r for r in rows if r]
    return lines[0], rows[0], rows[1:]


def max_abs_walk_prob(n, level):
    count = 0
    for bits in range(1 << n):
        s = 0
        m = 0
        for i in range(n):
            s += 1 if (bits >> i) & 1 else -1
            m = max(m, abs(s))
        if m > level:
            count += 1
    return count / (1 << n)


DOUBLING = """
[measure]
kind = "scaled_rotation"
log_scales = [{log2}]
weights = [1.0]

[run]
seed = 7
""".format(log2=repr(LOG2))

PM_ONE = """
[measure]
kind = "scaled_rotation"
log_scales = [1.0, -1.0]
weights = [0.5, 0.5]
uniform_rotation = false

[run]
seed = 11
"""


# ---------------------------------------------------------------------------
# lyapunov


def test_lyapunov_exact_doubling(tmp_path):
    cfg = write_config(
        tmp_path, DOUBLING + "\n[lyapunov]\nn = 200\nreps = 300\n"
    )
    out = str(tmp_path / "out")
    assert main(["lyapunov", "--config", cfg, "--out", out]) == 0
    data = json.load(open(os.path.join(out, "lyapunov.json")))
    assert abs(data["lambda_hat"] - LOG2) <= 1e-12
    assert abs(data["v_hat"]) <= 1e-20
    _, header, rows = read_csv(os.path.join(out, "trajectory_means.csv"))
    assert header == ["trajectory", "mean_increment"]
    assert len(rows) == 300
    assert all(abs(float(r[1]) - LOG2) <= 1e-13 for r in rows)
    manifest = json.load(open(os.path.join(out, "run_manifest.json")))
    assert manifest["command"] == "lyapunov"
    assert "lyapunov.json" in manifest["outputs"]


def test_missing_reps_is_anchored_config_error(tmp_path, capsys):
    cfg = write_config(tmp_path, DOUBLING + "\n[lyapunov]\nn = 100\n")
    assert main(["lyapunov", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "reps" in err and "lyapunov" in err and "exp.toml" in err


def test_same_seed_reruns_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path, DOUBLING + "\n[lyapunov]\nn = 50\nreps = 120\n")
    out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["lyapunov", "--config", cfg, "--out", out_a]) == 0
    assert main(["lyapunov", "--config", cfg, "--out", out_b, "--threads", "4"]) == 0
    for name in ("trajectory_means.csv",):
        a = open(os.path.join(out_a, name), "rb").read()
        b = open(os.path.join(out_b, name), "rb").read()
        assert a == b
    ma = json.load(open(os.path.join(out_a, "run_manifest.json")))
    mb = json.load(open(os.path.join(out_b, "run_manifest.json")))
    assert ma["run_hash"] == mb["run_hash"]


# ---------------------------------------------------------------------------
# tails


def test_tails_zero_variance_all_zero_exit4(tmp_path):
    cfg = write_config(
        tmp_path,
        DOUBLING
        + "\n[tails]\nn = 64\nalpha = 1.0\ny_grid = [0.1, 0.2]\nreps = 200\n"
        + "x_grid = 1\nlam = {}\n".format(repr(LOG2)),
    )
    out = str(tmp_path / "out")
    assert main(["tails", "--config", cfg, "--out", out]) == 4
    _, header, rows = read_csv(os.path.join(out, "tails.csv"))
    assert header == ["n", "alpha", "y", "p_hat", "ci_lo", "ci_hi", "x_grid", "reps", "seed"]
    assert all(float(r[3]) == 0.0 for r in rows)
    assert not os.path.exists(os.path.join(out, "tails_lam_minus.csv"))


def test_tails_estimated_lam_sensitivity_files(tmp_path):
    cfg = write_config(
        tmp_path,
        PM_ONE
        # keep the threshold off the walk's lattice so the estimated drift
        # cannot flip the strict comparison at an atom
        + "\n[tails]\nn = 8\nalpha = 1.0\ny_grid = [0.3]\nreps = 2000\nx_grid = 1\n"
        + "lyap_n = 64\nlyap_reps = 400\n",
    )
    out = str(tmp_path / "out")
    assert main(["tails", "--config", cfg, "--out", out]) == 0
    for name in ("tails.csv", "tails_lam_minus.csv", "tails_lam_plus.csv"):
        assert os.path.exists(os.path.join(out, name))
    data = json.load(open(os.path.join(out, "tails.json")))
    assert data["lam_source"] == "estimated"
    assert abs(data["lam_center"]) <= 0.1
    _, _, rows = read_csv(os.path.join(out, "tails.csv"))
    exact = max_abs_walk_prob(8, 2.4)
    assert abs(float(rows[0][3]) - exact) <= 0.06


def test_tails_unsorted_y_grid_rejected(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        PM_ONE + "\n[tails]\nn = 8\nalpha = 1.0\ny_grid = [0.5, 0.2]\nreps = 200\nlam = 0.0\n",
    )
    assert main(["tails", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "y_grid" in err and "tails" in err


def test_tails_series_lil(tmp_path):
    cfg = write_config(
        tmp_path,
        PM_ONE
        + "\n[tails]\nn = 8\nalpha = 1.0\ny_grid = [0.25]\nreps = 500\nx_grid = 1\n"
        + "lam = 0.0\nseries = \"lil\"\nseries_schedule = [8, 64]\nseries_y = 2.0\n"
        + "series_v = 1.0\n",
    )
    out = str(tmp_path / "out")
    assert main(["tails", "--config", cfg, "--out", out]) == 0
    _, header, rows = read_csv(os.path.join(out, "series.csv"))
    assert header == ["n", "term", "partial_sum", "verdict"]
    assert [r[0] for r in rows] == ["8", "64"]
    data = json.load(open(os.path.join(out, "tails.json")))
    assert data["series"]["kind"] == "lil"


def test_tails_rate_fit_csv(tmp_path):
    cfg = write_config(
        tmp_path,
        PM_ONE
        + "\n[tails]\nn = 64\nalpha = 1.0\nreps = 3000\nx_grid = 1\nlam = 0.0\n"
        + "y_grid = [0.05, 0.0707, 0.1, 0.1414, 0.2, 0.2828, 0.4]\n"
        + "regime = \"large-dev\"\n",
    )
    out = str(tmp_path / "out")
    code = main(["tails", "--config", cfg, "--out", out])
    assert code == 0
    _, header, rows = read_csv(os.path.join(out, "rate_fit.csv"))
    assert header == ["regime", "exponent_hat", "constant_hat", "r_squared", "window"]
    assert rows[0][0] == "large-dev"
    # Gaussian regime: the fitted power of y should be near 2
    assert 1.2 <= float(rows[0][1]) <= 3.0


# ---------------------------------------------------------------------------
# bounds


def test_bounds_haeusler_closed_form(tmp_path):
    cfg = write_config(
        tmp_path,
        DOUBLING
        + "\n[bounds]\nsuites = [\"haeusler\"]\n"
        + "gamma_grid = [1.0]\nu_grid = [1.0]\nv_grid = [1.0]\n",
    )
    out = str(tmp_path / "out")
    assert main(["bounds", "--config", cfg, "--out", out]) == 0
    _, header, rows = read_csv(os.path.join(out, "bounds_haeusler.csv"))
    assert header == ["gamma", "u", "v", "p1", "p2", "bound", "plain_term", "sharp_term"]
    assert abs(float(rows[0][5]) - 2.0 * math.e) <= 1e-12


def test_bounds_maximal_zero_violations(tmp_path):
    cfg = write_config(
        tmp_path, DOUBLING + "\n[bounds]\nsuites = [\"maximal\"]\nmax_n = 4\n"
    )
    out = str(tmp_path / "out")
    assert main(["bounds", "--config", cfg, "--out", out]) == 0
    data = json.load(open(os.path.join(out, "bounds.json")))
    assert data["zero_violations"] is True
    assert data["maximal_violations"] == 0
    _, _, rows = read_csv(os.path.join(out, "bounds_maximal.csv"))
    assert all(int(r[3]) == 0 for r in rows)
    assert all(float(r[4]) >= -1e-12 for r in rows)


def test_bounds_vbe_out_of_range_p_exit2(tmp_path, capsys):
    cfg = write_config(
        tmp_path, DOUBLING + "\n[bounds]\nsuites = [\"vbe\"]\nvbe_p = [2.5]\n"
    )
    assert main(["bounds", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "p" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# mdp


def test_mdp_c_table_and_rates(tmp_path):
    cfg = write_config(
        tmp_path,
        PM_ONE + "\n[mdp]\nbn_alpha = 0.75\nv = 1.0\ncompare = false\n",
    )
    out = str(tmp_path / "out")
    assert main(["mdp", "--config", cfg, "--out", out]) == 0
    _, header, rows = read_csv(os.path.join(out, "mdp_c_of_n.csv"))
    assert header == ["n", "c"]
    assert len(rows) == 20
    for r in rows:
        n = int(r[0])
        assert float(r[1]) == float(n**3)
    _, _, rate_rows = read_csv(os.path.join(out, "mdp_rates.csv"))
    for r in rate_rows:
        y = float(r[0])
        assert abs(float(r[1]) - y * y / 2.0) <= 1e-12


def test_mdp_invalid_bnspec_exit2(tmp_path, capsys):
    cfg = write_config(
        tmp_path, PM_ONE + "\n[mdp]\nbn_alpha = 0.5\nv = 1.0\ncompare = false\n"
    )
    assert main(["mdp", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "bn_alpha" in capsys.readouterr().err


def test_mdp_compare_band_and_target(tmp_path):
    cfg = write_config(
        tmp_path,
        PM_ONE
        + "\n[mdp]\nbn_alpha = 0.6\nv = 1.0\ny = 1.0\nlam = 0.0\n"
        + "schedule = [256, 1024]\nreps = 1500\n",
    )
    out = str(tmp_path / "out")
    assert main(["mdp", "--config", cfg, "--out", out]) == 0
    data = json.load(open(os.path.join(out, "mdp.json")))
    assert data["target"] == -0.5
    _, header, rows = read_csv(os.path.join(out, "mdp_compare.csv"))
    assert header[:5] == ["n", "b_n", "p_hat", "ci_lo", "ci_hi"]
    for r in rows:
        assert -1.2 <= float(r[5]) <= -0.2


def test_mdp_all_censored_exit4(tmp_path):
    cfg = write_config(
        tmp_path,
        PM_ONE
        + "\n[mdp]\nbn_alpha = 0.6\nv = 1.0\ny = 50.0\nlam = 0.0\n"
        + "schedule = [64]\nreps = 200\n",
    )
    out = str(tmp_path / "out")
    assert main(["mdp", "--config", cfg, "--out", out]) == 4
    _, _, rows = read_csv(os.path.join(out, "mdp_compare.csv"))
    assert all(r[8] == "true" for r in rows)


def test_mdp_arcones_finite_support(tmp_path):
    cfg = write_config(
        tmp_path,
        """
[measure]
kind = "finite_support"
matrices = [[[3.0, 0.0], [0.0, 0.3333333333333333]], [[0.0, -1.0], [1.0, 0.0]]]
weights = [0.5, 0.5]

[run]
seed = 5

[mdp]
bn_alpha = 0.75
v = 1.0
compare = false
schedule = [16, 64, 256, 1024]
""",
    )
    out = str(tmp_path / "out")
    assert main(["mdp", "--config", cfg, "--out", out]) == 0
    data = json.load(open(os.path.join(out, "mdp.json")))
    assert data["arcones_verdict"] == "satisfied"
    _, header, rows = read_csv(os.path.join(out, "mdp_arcones.csv"))
    assert header == ["n", "b_n", "verbatim", "log_reading"]
    assert rows[-1][3] == "-inf"
    assert float(rows[-1][2]) == 0.0


# ---------------------------------------------------------------------------
# decompose


def test_decompose_trivial_psi(tmp_path):
    cfg = write_config(
        tmp_path, DOUBLING + "\n[decompose]\ngrid_size = 256\nn = 32\n"
    )
    out = str(tmp_path / "out")
    assert main(["decompose", "--config", cfg, "--out", out]) == 0
    _, header, rows = read_csv(os.path.join(out, "psi.csv"))
    assert header == ["angle", "psi"]
    assert all(float(r[1]) == 0.0 for r in rows)
    data = json.load(open(os.path.join(out, "decompose.json")))
    assert data["residual_within_10tol"] is True
    assert abs(data["lambda_used"] - LOG2) <= 1e-12
    _, _, drows = read_csv(os.path.join(out, "decompose.csv"))
    assert all(abs(float(r[2])) <= 1e-12 for r in drows)  # D vanishes exactly


def test_decompose_d3_points_to_alternative(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        """
[measure]
kind = "gaussian"
entry_std = 1.0
dim = 3

[run]
seed = 3

[decompose]
grid_size = 256
""",
    )
    assert main(["decompose", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "d = 2" in err
    assert "r_seq" in err


def test_decompose_contracting_family_residual(tmp_path):
    cfg = write_config(
        tmp_path,
        """
[measure]
kind = "finite_support"
matrices = [[[3.0, 0.0], [0.0, 0.3333333333333333]], [[0.25, -0.9682458365518543], [0.9682458365518543, 0.25]]]
weights = [0.5, 0.5]

[run]
seed = 13

[decompose]
grid_size = 512
tol = 1e-7
n = 64
binned_reps = 2000
""",
    )
    out = str(tmp_path / "out")
    assert main(["decompose", "--config", cfg, "--out", out]) == 0
    data = json.load(open(os.path.join(out, "decompose.json")))
    assert data["residual_within_10tol"] is True
    assert data["sup_psi"] > 0.0
    assert data["binned_max_violation"] <= 0.0
    assert os.path.exists(os.path.join(out, "binned_means.csv"))


# ---------------------------------------------------------------------------
# check-measure


@pytest.mark.parametrize(
    "measure",
    [
        PM_ONE,
        """
[measure]
kind = "heavy_tailed"
tail_index = 1.5

[run]
seed = 17
""",
        """
[measure]
kind = "gaussian"
entry_std = 1.0

[run]
seed = 19
""",
    ],
    ids=["scaled-rotation", "heavy-tailed", "gaussian"],
)
def test_check_measure_passes(tmp_path, measure):
    cfg = write_config(tmp_path, measure)
    out = str(tmp_path / "out")
    assert main(["check-measure", "--config", cfg, "--out", out]) == 0
    data = json.load(open(os.path.join(out, "check_measure.json")))
    assert data["all_passed"] is True
    names = [c["name"] for c in data["checks"]]
    assert "cocycle-identity" in names


# ---------------------------------------------------------------------------
# seeds, hashes, malformed input


def test_seed_precedence(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, DOUBLING + "\n[lyapunov]\nn = 10\nreps = 20\n")

    def seed_of(argv):
        out = str(tmp_path / f"o{seed_of.i}")
        seed_of.i += 1
        assert main(argv + ["--out", out]) == 0
        return json.load(open(os.path.join(out, "run_manifest.json")))["master_seed"]

    seed_of.i = 0
    base = ["lyapunov", "--config", cfg]
    assert seed_of(base) == 7  # from config
    monkeypatch.setenv("GLLAB_SEED", "2")
    assert seed_of(base) == 2  # env overrides config
    assert seed_of(base + ["--seed", "3"]) == 3  # flag overrides env


def test_no_seed_anywhere_is_config_error(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        "[measure]\nkind = \"scaled_rotation\"\nlog_scales = [1.0]\nweights = [1.0]\n"
        "\n[lyapunov]\nn = 10\nreps = 20\n",
    )
    assert main(["lyapunov", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "seed" in capsys.readouterr().err


def test_run_hash_stable_and_seed_sensitive(tmp_path):
    cfg = write_config(tmp_path, DOUBLING + "\n[lyapunov]\nn = 10\nreps = 20\n")
    outs = [str(tmp_path / f"h{i}") for i in range(3)]
    assert main(["lyapunov", "--config", cfg, "--out", outs[0]]) == 0
    assert main(["lyapunov", "--config", cfg, "--out", outs[1]]) == 0
    assert main(["lyapunov", "--config", cfg, "--out", outs[2], "--seed", "99"]) == 0
    first = [open(os.path.join(o, "trajectory_means.csv")).readline() for o in outs]
    assert first[0] == first[1]
    assert first[0] != first[2]


def test_malformed_toml_exit2(tmp_path, capsys):
    cfg = write_config(tmp_path, "x = [\n")
    assert main(["lyapunov", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "syntax" in capsys.readouterr().err


def test_unknown_measure_kind_exit2(tmp_path, capsys):
    cfg = write_config(
        tmp_path, "[measure]\nkind = \"nope\"\n\n[run]\nseed = 1\n"
    )
    assert main(["lyapunov", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "unknown measure kind" in capsys.readouterr().err
