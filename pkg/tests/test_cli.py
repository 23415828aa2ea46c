import csv

import numpy as np
import pytest

from mfglift import archive
from mfglift.cli import fan_out, main, parse_seeds
from mfglift.coefficients import CertificationError, affine_decompose, random_grid_measure
from mfglift.modelfile import ModelFileError, load_model, model_text, parse_model, parse_model_text, template_path, template_text

BAD_F = template_text().replace(
    "running = control_cost(1.0) + convolution(identity, square(-0.5))", "running = control_cost(1.0) + x_times_mean(1.0)"
)


def test_template_certified():
    m = parse_model(template_path())
    assert m.lift_eligible
    assert all(getattr(m.coefficients, k).certified for k in ("b", "sigma", "f", "g"))
    assert m.initial.x_min == -4.0 and m.initial.n == 401 and m.initial.dx == 0.02
    assert m.initial.variance() == pytest.approx(0.25, abs=1e-6)


def test_non_invariant_cost_refused():
    with pytest.raises(CertificationError) as err:
        parse_model_text(BAD_F)
    msg = str(err.value)
    assert "f" in msg and "t=" in msg and "q=" in msg
    assert err.value.report.witness


def test_non_invariant_cost_allowed_without_lift():
    mf = parse_model_text(BAD_F.replace("lift = true", "lift = false"))
    assert not mf.model.lift_eligible


def test_affine_block_matches_programmatic():
    text = template_text() + "\n[affine]\nQ = 1.0\nr_f = 0.5\nr_g = 0.5\n"
    parsed = parse_model_text(text).model
    direct = affine_decompose(parse_model_text(template_text()).model, 1.0, 0.5, 0.5)
    assert parsed.lift_eligible
    rng = np.random.default_rng(0)
    for _ in range(50):
        mu = random_grid_measure(rng)
        t, x, a = rng.uniform(0, 1), rng.uniform(mu.x_min, mu.x_max), rng.uniform(-3, 3)
        for k in ("b", "sigma", "f", "g", "b0", "sigma0"):
            assert float(getattr(parsed.coefficients, k)(t, x, mu, a)) == float(getattr(direct.coefficients, k)(t, x, mu, a))


def test_write_parse_round_trip(tmp_path):
    text = template_text() + "\n[affine]\nQ = 1.0\nr_f = 0.5\nr_g = 0.5\n"
    text = text.replace("sigma0 = constant(0.4)", "sigma0 = mean(tanh) + constant(0.4)")
    m = parse_model_text(text).model
    p = tmp_path / "m.cfg"
    p.write_text(model_text(m, 1e-3))
    m2 = parse_model(p)
    assert m2.initial == m.initial
    rng = np.random.default_rng(1)
    for _ in range(1000):
        mu = random_grid_measure(rng)
        t, x, a = rng.uniform(0, 1), rng.uniform(mu.x_min, mu.x_max), rng.uniform(-3, 3)
        for k in ("b", "sigma", "f", "g", "b0", "sigma0"):
            v1 = float(getattr(m.coefficients, k)(t, x, mu, a))
            v2 = float(getattr(m2.coefficients, k)(t, x, mu, a))
            assert abs(v1 - v2) <= 1e-12


def test_unknown_functional_position():
    text = template_text().replace("drift = control(1.0)", "drift = control(1.0) + wobble(2)")
    with pytest.raises(ModelFileError, match="unknown functional name 'wobble'") as err:
        parse_model_text(text, "m.cfg")
    line = text.splitlines().index("drift = control(1.0) + wobble(2)") + 1
    assert err.value.line == line and err.value.column == 9
    assert f"m.cfg:{line}:9" in str(err.value)


def test_missing_key_and_section():
    with pytest.raises(ModelFileError, match="missing required key 'sigma'"):
        parse_model_text(template_text().replace("sigma = constant(0.3)\n", ""))
    with pytest.raises(ModelFileError, match=r"missing required section \[control\]"):
        parse_model_text(template_text().replace("[control]", "[controls]"))
    with pytest.raises(ModelFileError, match="initial law"):
        parse_model_text(template_text().replace("normal(0.0, 0.25)", "cauchy(0, 1)"))


def test_seed_parsing_and_fan_out(monkeypatch):
    assert parse_seeds("0..3") == [0, 1, 2, 3]
    assert parse_seeds("5") == [5]
    assert parse_seeds("1,4,9") == [1, 4, 9]
    monkeypatch.setenv("MFGLIFT_THREADS", "4")
    assert fan_out(lambda s: s * s, list(range(10))) == [s * s for s in range(10)]


# -------------------------------------------------------------------------
# end-to-end


@pytest.fixture(scope="module")
def ncn_archive(tmp_path_factory):
    out = tmp_path_factory.mktemp("ncn")
    assert main(["solve-ncn", "--dt", "2e-3", "--output", str(out)]) == 0
    return out


def test_archive_self_describing(ncn_archive):
    sol = archive.load_ncn(ncn_archive)
    assert sol.converged and sol.model.lift_eligible
    assert (ncn_archive / "feedback.csv").read_text().splitlines()[0] == "t,x,alpha"
    assert sol.flow[0] == sol.model.initial


def test_lift_verify_inverse(ncn_archive, tmp_path, capsys):
    assert main(["lift", "--archive", str(ncn_archive), "--seeds", "3", "--output", str(tmp_path / "cn")]) == 0
    assert archive.archive_kind(tmp_path / "cn") == "cn"
    assert main(["inverse-lift", "--archive", str(tmp_path / "cn"), "--output", str(tmp_path / "inv")]) == 0
    code = main(["verify", "--archive", str(tmp_path / "cn"), "--n-particles", "2000", "--no-optimality"])
    out = capsys.readouterr().out
    assert code == 0, out
    assert "PASS fixed_point_W1" in out
    with (tmp_path / "cn" / "report.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert {r["check"] for r in rows} == {"fixed_point_W1", "objective_equality_rel"}


def test_lift_refuses_unconverged(tmp_path, capsys):
    out = tmp_path / "ncn"
    assert main(["solve-ncn", "--dt", "5e-3", "--max-iter", "1", "--output", str(out)]) == 1
    code = main(["lift", "--archive", str(out), "--output", str(tmp_path / "cn")])
    assert code != 0
    assert "base solution not converged" in capsys.readouterr().err


def test_verify_detects_corrupted_flow(ncn_archive, tmp_path, capsys):
    bad = tmp_path / "bad"
    bad.mkdir()
    for f in ncn_archive.iterdir():
        (bad / f.name).write_bytes(f.read_bytes())
    data = np.loadtxt(bad / "flow.csv", delimiter=",", skiprows=1)
    data[:, 1] += 0.5
    np.savetxt(bad / "flow.csv", data, delimiter=",", header="t,x,density", comments="", fmt="%.17g")
    code = main(["verify", "--archive", str(bad), "--n-particles", "2000", "--no-optimality"])
    out = capsys.readouterr().out
    assert code != 0
    w1 = float(next(r for r in csv.DictReader((bad / "report.csv").open()) if r["check"] == "fixed_point_W1")["value"])
    assert w1 >= 0.4
    assert "FAIL fixed_point_W1" in out


def test_benchmark_lq(tmp_path, capsys):
    assert main(["benchmark-lq", "--dt", "2e-3", "--output", str(tmp_path)]) == 0
    assert (tmp_path / "comparison.csv").read_text().splitlines()[0] == "t,W1"
    assert (tmp_path / "grid" / "flow.csv").is_file() and (tmp_path / "riccati" / "flow.csv").is_file()
    assert "PASS sup_W1_grid_vs_riccati" in capsys.readouterr().out


def test_check_assumptions(capsys):
    assert main(["check-assumptions", "--samples", "50"]) == 0
    out = capsys.readouterr().out
    assert "PASS translation_invariance_f" in out


def test_parse_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text(BAD_F)
    assert main(["solve-ncn", "--config", str(p), "--output", str(tmp_path / "o")]) == 2
    assert "not translation invariant" in capsys.readouterr().err


def test_missing_archive(tmp_path, capsys):
    assert main(["verify", "--archive", str(tmp_path / "nope")]) == 2
    assert "archive not found" in capsys.readouterr().err


def test_control_dependent_sigma_rejected():
    text = template_text().replace("sigma = constant(0.3)", "sigma = constant(0.3) + control(0.1)")
    with pytest.raises(ModelFileError, match="sigma must not depend on the control"):
        parse_model_text(text)
