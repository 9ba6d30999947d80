import json

import numpy as np
import pytest

from shelab.cli import main
from shelab.errors import ConfigurationError, EmptySuiteError, InvalidMollifierError, ResolutionError
from shelab.experiments import ExperimentConfig, gap_trend, run_constants, run_convergence
from shelab.records import (
    ResultRecord,
    config_hash,
    read_records,
    read_snapshot,
    write_columns,
    write_snapshot,
)


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _run(tmp_path, command, cfg):
    out = tmp_path / "out"
    code = main([command, "--config", _write(tmp_path, cfg), "--out", str(out)])
    return code, out


# records


def test_config_hash_ignores_key_order():
    a = {"kind": "constants", "mollifier": {"width": 1.0, "amplitude": 1.0}, "p": 1}
    b = {"p": 1, "mollifier": {"amplitude": 1.0, "width": 1.0}, "kind": "constants"}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, "p": 2})


def test_snapshot_roundtrip(tmp_path):
    arr = np.arange(12.0).reshape(3, 4)
    write_snapshot(tmp_path / "f.bin", arr, {"t": 0.5})
    back, meta = read_snapshot(tmp_path / "f.bin")
    np.testing.assert_array_equal(back, arr)
    assert meta["t"] == 0.5 and meta["shape"] == [3, 4] and meta["dtype"] == "<f8"
    head = (tmp_path / "f.bin").read_bytes().split(b"\n", 2)
    assert head[0] == b"SHELAB-SNAPSHOT 1"
    json.loads(head[1])


def test_snapshot_rejects_other_files(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"hello\n{}\n")
    with pytest.raises(ValueError):
        read_snapshot(tmp_path / "x.bin")


def test_columns(tmp_path):
    write_columns(tmp_path / "c.dat", [1, 2], [3, 4], ("eps", "gap"))
    assert np.loadtxt(tmp_path / "c.dat").tolist() == [[1, 3], [2, 4]]
    assert (tmp_path / "c.dat").read_text().startswith("# eps gap")


def test_record_payload_excludes_wall_time():
    a = ResultRecord("h", "op", {"x": 1}, {"v": 2.0}, wall_time=1.0)
    b = ResultRecord("h", "op", {"x": 1}, {"v": 2.0}, wall_time=5.0)
    assert a.payload_json() == b.payload_json()
    assert a.to_json() != b.to_json()


# configuration validation


def test_config_validation_errors():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"kind": "nothing"})
    with pytest.raises(InvalidMollifierError):
        ExperimentConfig.from_dict({"kind": "constants", "mollifier": {"amplitude": 0.9}})
    with pytest.raises(ResolutionError):
        ExperimentConfig.from_dict({"kind": "simulate", "equation": {"kind": "dshe", "eps": 0.1},
                                    "grid": {"dx": 0.025}})
    with pytest.raises(ConfigurationError, match="CFL|multiple"):
        ExperimentConfig.from_dict({"kind": "simulate", "equation": {"kind": "mshe"}, "t": 0.0001})
    with pytest.raises(InvalidMollifierError):
        ExperimentConfig.from_dict({"kind": "oracle", "oracle": "sing", "mollifier": {"width": 0.5}})
    with pytest.raises(ConfigurationError, match="dt_eps"):
        ExperimentConfig.from_dict({"kind": "oracle", "oracle": "coupling", "eps": 0.5, "dt_eps": 1e-3})
    with pytest.raises(ConfigurationError, match="descending"):
        ExperimentConfig.from_dict({"kind": "convergence", "chain": "dshe", "eps_ladder": [0.1, 0.2]})
    with pytest.raises(EmptySuiteError):
        ExperimentConfig.from_dict({"kind": "verify", "suite": []})


# commands and exit codes


def test_constants_command(tmp_path, capsys):
    code, out = _run(tmp_path, "constants", {"kind": "constants", "p": 1, "master_seed": 0})
    assert code == 0
    recs = {r.operation: r for r in read_records(out / "results.jsonl")}
    assert recs["gamma_ext_sq"].payload["exceeds_one"] is True
    assert recs["psi_slope"].payload["matches"] is True
    assert recs["sigma_p_sq"].payload["value"] == pytest.approx(0.6889998646400702, rel=1e-10)
    assert (out / "psi_profile.dat").exists() and (out / "manifest.json").exists()


def test_constants_monotone_in_norm(tmp_path):
    def gamma(l2):
        cfg = ExperimentConfig.from_dict({"kind": "constants", "mollifier": {"l2_norm_sq": l2}}, tmp_path / str(l2))
        return {r.operation: r for r in run_constants(cfg)}["gamma_ext_sq"].payload["value"]

    assert gamma(0.99) > gamma(0.5)


def test_invalid_mollifier_exit_code(tmp_path, capsys):
    code, _ = _run(tmp_path, "constants", {"kind": "constants", "mollifier": {"amplitude": 1.1}})
    assert code == 2
    assert "validation error" in capsys.readouterr().err


def test_configuration_exit_codes(tmp_path):
    assert main(["constants", "--config", str(tmp_path / "missing.json")]) == 3
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["constants", "--config", str(tmp_path / "bad.json")]) == 3
    code, _ = _run(tmp_path, "verify", {"kind": "verify", "suite": []})
    assert code == 3
    code, _ = _run(tmp_path, "oracle", {"kind": "constants"})
    assert code == 3


def test_simulate_command(tmp_path):
    cfg = {"kind": "simulate", "master_seed": 2, "equation": {"kind": "mshe"}, "grid": {"dx": 0.1},
           "t": 0.1, "replicas": 8, "test_functions": [{"center": 0.0, "radius": 1.0}]}
    code, out = _run(tmp_path, "simulate", cfg)
    assert code == 0
    recs = read_records(out / "results.jsonl")
    assert {r.parameters["n"] for r in recs} == {1, 2}
    arr, meta = read_snapshot(out / "field_t0.bin")
    assert arr.shape[0] == 1 and meta["config_hash"] == recs[0].config_hash


def test_simulate_is_reproducible(tmp_path):
    cfg = {"kind": "simulate", "master_seed": 2, "equation": {"kind": "mshe"}, "grid": {"dx": 0.1},
           "t": 0.1, "replicas": 8, "snapshots": 0}
    main(["simulate", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "b"), "--threads", "2"])
    a = [r.payload_json() for r in read_records(tmp_path / "a" / "results.jsonl")]
    b = [r.payload_json() for r in read_records(tmp_path / "b" / "results.jsonl")]
    assert a == b


@pytest.mark.parametrize("oracle,extra", [("closed_form", {"gamma": 1.0}), ("levy", {"gamma": 1.0}),
                                          ("quadrature", {"gamma": 0.5}),
                                          ("bm_local_time", {"gamma": 1.0, "replicas": 200}),
                                          ("bm_exponent", {"replicas": 200, "eps": 0.8}),
                                          ("diff", {"replicas": 200, "eps": 0.8}),
                                          ("sing", {"replicas": 200, "eps": 0.8}),
                                          ("girsanov", {"replicas": 200, "eps": 0.8}),
                                          ("coupling", {"n": 3, "x": [0, 0.1, 0.2], "eps": 0.5, "t": 0.05})])
def test_oracle_command(tmp_path, oracle, extra):
    cfg = {"kind": "oracle", "oracle": oracle, "t": 0.1, **extra}
    code, out = _run(tmp_path, "oracle", cfg)
    assert code == 0
    (rec,) = read_records(out / "results.jsonl")
    assert rec.config_hash == config_hash(cfg)


def test_closed_form_oracle_value(tmp_path):
    code, out = _run(tmp_path, "oracle", {"kind": "oracle", "oracle": "closed_form", "gamma": 1.0, "t": 1.0,
                                          "convention": "tanaka"})
    (rec,) = read_records(out / "results.jsonl")
    assert rec.payload["value"] == pytest.approx(5.008980080762283, rel=1e-12)


def test_verify_small_suite_and_negative_control(tmp_path):
    suite = [
        {"test": "gbf_moment", "params": {"t_minus_s": 0.25, "n_max": 2, "replicas": 20_000}},
        {"test": "gbf_moment", "params": {"t_minus_s": 0.25, "n_max": 2, "replicas": 20_000,
                                          "exponent_scale": 2.0}, "negative_control": True},
        {"test": "independence", "params": {"first": [0.0, 0.25], "second": [0.1, 0.5], "dx": 0.1},
         "negative_control": True},
    ]
    code, out = _run(tmp_path, "verify", {"kind": "verify", "master_seed": 1, "suite": suite})
    assert code == 0
    recs = read_records(out / "results.jsonl")
    assert all(r.payload["as_expected"] for r in recs)


def test_verify_broken_pairing_exits_one(tmp_path):
    # a mismatched-seed composition run as an ordinary test must fail the suite
    suite = [{"test": "composition", "params": {"seed_whole": 99, "dx": 0.1, "replicas": 50}}]
    code, _ = _run(tmp_path, "verify", {"kind": "verify", "master_seed": 1, "suite": suite})
    assert code == 1


def test_convergence_single_eps(tmp_path):
    cfg = ExperimentConfig.from_dict({"kind": "convergence", "chain": "dshe", "eps_ladder": [0.8], "t": 0.1,
                                      "replicas": 500}, tmp_path)
    recs = run_convergence(cfg)
    assert recs[-1].payload["trend"] == "n/a"
    assert (tmp_path / "gap_dshe.dat").exists()


def test_convergence_budget_flags_partial(tmp_path):
    cfg = ExperimentConfig.from_dict({"kind": "convergence", "chain": "ashe", "eps_ladder": [0.8, 0.4],
                                      "t": 0.1, "replicas": 200, "budget_seconds": 0.0}, tmp_path)
    recs = run_convergence(cfg)
    assert recs[-1].payload["partial"] is True


def test_gap_trend():
    assert gap_trend([(0.3, 0.01), (0.2, 0.01), (0.1, 0.01)]) == "non-increasing"
    assert gap_trend([(0.1, 0.01), (0.3, 0.01)]) == "increasing"
    assert gap_trend([(0.1, 0.05), (0.15, 0.05)]) == "non-increasing"
    assert gap_trend([(0.1, 0.01)]) == "n/a"
