import pytest

from cgolab.cli import (
    EXIT_CONFIG_ERROR,
    EXIT_NUMERICAL_FAILURE,
    EXIT_PASS,
    ConfigError,
    canonical_config,
    config_hash,
    execute,
    main,
    parse_config_text,
    read_report,
)

VERIFY_CFG = {
    "experiment": "verify-operators",
    "grid.n": 32,
    "seed": 5,
    "medium1.alpha_bumps": [[0.01, 0.25, -0.1, 0.2, 1.0]],
    "medium1.beta_bumps": [[0.008, -0.2, 0.2, 0.0, 0.9]],
    "medium.band_limit": 3,
}


def test_parse_config_round_trip():
    text = """
    # comment line
    grid.n = 24
    solver.tau_schedule = [4, 8]
    medium.profile = gauss
    medium1.alpha_bumps = [[0.1, 0.0, 0.0, 0.0, 1.0]]
    """
    cfg = parse_config_text(text)
    assert cfg["grid.n"] == 24
    assert cfg["solver.tau_schedule"] == [4, 8]
    assert cfg["medium.profile"] == "gauss"
    again = parse_config_text(canonical_config(cfg))
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)


def test_parse_config_rejects_garbage():
    with pytest.raises(ConfigError):
        parse_config_text("this is not a key value line")
    with pytest.raises(ConfigError):
        parse_config_text(" = 3")


def test_unknown_keys_rejected(tmp_path):
    cfg = dict(VERIFY_CFG)
    cfg["grid.nn"] = 12
    with pytest.raises(ConfigError, match="unknown config keys"):
        execute(cfg, tmp_path / "out")


def test_execute_verify_operators(tmp_path):
    out = tmp_path / "run"
    status = execute(dict(VERIFY_CFG), out)
    assert status == EXIT_PASS
    report = read_report(out / "report.txt")
    assert report["overall_pass"] is True
    assert report["experiment"] == "verify-operators"
    assert report["config_hash"] == config_hash(VERIFY_CFG)
    assert "operators.leibniz.Q" in report["checks"]
    assert (out / "config.cfg").exists()


def test_cli_main_exit_codes(tmp_path):
    cfg_path = tmp_path / "bad.cfg"
    cfg_path.write_text("grid.n = not json but fine\nbogus key\n")
    status = main(
        ["verify-operators", "--config", str(cfg_path), "--output", str(tmp_path / "o")]
    )
    assert status == EXIT_CONFIG_ERROR


def test_replay_reproduces_and_refuses_tamper(tmp_path):
    out = tmp_path / "orig"
    assert execute(dict(VERIFY_CFG), out) == EXIT_PASS
    status = main(["replay", str(out), "--output", str(tmp_path / "replayed")])
    assert status == EXIT_PASS
    rep = read_report(tmp_path / "replayed" / "report.txt")
    orig = read_report(out / "report.txt")
    for name, rec in orig["checks"].items():
        new = rep["checks"][name]
        denom = max(abs(rec["value"]), 1e-300)
        assert abs(new["value"] - rec["value"]) / denom <= 1e-13 or rec["value"] == 0

    # tampering with the stored config must be refused
    cfg_file = out / "config.cfg"
    cfg_file.write_text(cfg_file.read_text().replace("seed = 5", "seed = 6"))
    status = main(["replay", str(out), "--output", str(tmp_path / "replay2")])
    assert status == EXIT_CONFIG_ERROR


def test_null_test_experiment_equal_media(tmp_path):
    cfg = {
        "experiment": "null-test",
        "grid.n": 16,
        "medium1.alpha_bumps": [[0.02, 0.1, 0.0, 0.0, 0.8]],
        "medium1.beta_bumps": [],
        "medium2.alpha_bumps": [[0.02, 0.1, 0.0, 0.0, 0.8]],
        "medium2.beta_bumps": [],
        "medium.band_limit": 3,
        "masks.omega_radius": 1.4,
        "masks.omega_prime_radius": 1.2,
        "nulltest.xi_list": [[1, 0, 0]],
        "nulltest.tau": 8.0,
        "nulltest.expect": "coincide",
    }
    out = tmp_path / "null"
    assert execute(cfg, out) == EXIT_PASS
    rep = read_report(out / "report.txt")
    assert rep["checks"]["nulltest.pairing_exact_zero"]["value"] == 0.0


def test_carleman_experiment(tmp_path):
    cfg = {
        "experiment": "carleman",
        "grid.n": 16,
        "medium1.alpha_bumps": [[0.02, 0.0, 0.0, 0.0, 0.8]],
        "medium2.alpha_bumps": [],
        "medium.band_limit": 3,
        "masks.omega_radius": 1.4,
        "masks.omega_prime_radius": 1.2,
        "carleman.x0": [2.5, 0.0, 0.0],
        "carleman.h_sweep": [0.3, 0.2],
        "medium.support_tol": 0.05,
    }
    out = tmp_path / "carleman"
    assert execute(cfg, out) == EXIT_PASS
    assert (out / "carleman.csv").exists()
    rep = read_report(out / "report.txt")
    assert rep["checks"]["carleman.d2_gt_d1"]["pass"] is True


def test_determinism_across_runs(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert execute(dict(VERIFY_CFG), out1) == EXIT_PASS
    assert execute(dict(VERIFY_CFG), out2) == EXIT_PASS
    r1 = read_report(out1 / "report.txt")
    r2 = read_report(out2 / "report.txt")
    for name, rec in r1["checks"].items():
        v1, v2 = rec["value"], r2["checks"][name]["value"]
        assert abs(v1 - v2) <= 1e-13 * max(abs(v1), 1e-300)


def test_numerical_failure_exit_code(tmp_path):
    cfg_path = tmp_path / "bad_xi.cfg"
    cfg_path.write_text(
        "\n".join([
            "grid.n = 16",
            "medium1.alpha_bumps = [[0.02, 0.1, 0.0, 0.0, 0.8]]",
            "medium.band_limit = 3",
            "masks.omega_radius = 1.4",
            "masks.omega_prime_radius = 1.2",
            "nulltest.xi_list = [[0.5, 0, 0]]",  # not lattice-commensurate
            "nulltest.expect = differ",
        ])
    )
    status = main(
        ["null-test", "--config", str(cfg_path), "--output", str(tmp_path / "o")]
    )
    assert status == EXIT_NUMERICAL_FAILURE
