from __future__ import annotations

import io
import json
from pathlib import Path

import jsonschema
import pytest
import yaml

from gcir.analysis import RouteValue, TriangulationReport
from gcir.core import Regime
from gcir.errors import ConfigError
from gcir_runtime import RunContext, set_run_context
from gcir_runtime.cli import run
from toolsets.gcir.src import commands
from toolsets.gcir.src.commands import GfunParams, GfunResult, gfun, handler, resolve_threads
from toolsets.gcir.src.config import config_schema, load_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

ALL_COMMANDS = {"gfun", "moments", "pde", "simulate", "upper", "lower", "converge", "markov-check", "compare", "cdf"}


def _small_config(tmp_path: Path, base: str = "drift_case.json", **updates) -> Path:
    cfg = json.loads((CONFIGS / base).read_text())
    cfg["grid"] = {"x_max": 5.0, "nx": 101}
    cfg["euler"] = {**cfg["euler"], "n_steps": 64, "n_paths": 3 * 4096}
    cfg.update(updates)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


def _invoke(method: str, params: dict, **context) -> dict:
    return handler({"action": "invoke", "method": method, "params": params, "context": context}, None)


def test_gfun_unit():
    result = gfun(GfunParams(lo_sq=1, hi_sq=4, a=-2))
    assert isinstance(result, GfunResult)
    assert result.value == -1.0
    assert result.argmax == 1.0
    assert result.summary == "-1"


def test_describe_commands_contract():
    resp = handler({"action": "describe_commands"}, None)
    assert resp["result"]["toolset"] == "gcir"
    assert resp["result"]["toolset_version"] == "0.1.0"
    names = {c["name"] for c in resp["result"]["commands"]}
    assert names == ALL_COMMANDS
    for c in resp["result"]["commands"]:
        jsonschema.Draft202012Validator.check_schema(c["params_schema"])


def test_invoke_contract():
    resp = _invoke("gfun", {"lo_sq": 1, "hi_sq": 4, "a": 3})
    assert resp["result"]["value"] == 6.0


def test_invoke_errors():
    assert _invoke("nope", {})["error"]["type"] == "BadRequest"
    assert _invoke("gfun", {"lo_sq": 1, "hi_sq": 4})["error"]["type"] == "ValidationError"
    assert _invoke("gfun", {"lo_sq": 5, "hi_sq": 4, "a": 1})["error"]["type"] == "ValidationError"
    assert handler({"action": "bogus"}, None)["error"]["type"] == "BadRequest"


@pytest.mark.parametrize("name", ["drift_case.json", "qv_case.json", "full_model.yaml"])
def test_canonical_configs_match_schema(name):
    path = CONFIGS / name
    doc = yaml.safe_load(path.read_text()) if path.suffix == ".yaml" else json.loads(path.read_text())
    jsonschema.validate(doc, config_schema())
    cfg = load_config(path)
    assert load_config(path).config_hash() == cfg.config_hash()
    assert type(cfg).model_validate_json(cfg.canonical_json()) == cfg


def test_config_errors_carry_location(tmp_path):
    bad_key = tmp_path / "bad_key.json"
    bad_key.write_text(json.dumps({**json.loads((CONFIGS / "drift_case.json").read_text()), "n_pahts": 10}))
    with pytest.raises(ConfigError, match="field n_pahts"):
        load_config(bad_key)

    bad_syntax = tmp_path / "bad_syntax.json"
    bad_syntax.write_text('{\n  "x0": 1.0,\n  "t_prime": ,\n}')
    with pytest.raises(ConfigError, match=r"bad_syntax.json:3:\d+"):
        load_config(bad_syntax)

    bad_regime = tmp_path / "bad_regime.json"
    doc = json.loads((CONFIGS / "drift_case.json").read_text())
    doc["params"]["delta2"] = 0.5
    bad_regime.write_text(json.dumps(doc))
    with pytest.raises(ConfigError, match="field params"):
        load_config(bad_regime)


def test_moments_writes_stamped_artifacts(tmp_path):
    resp = _invoke("moments", {"config": str(CONFIGS / "drift_case.json")}, out_dir=str(tmp_path))
    doc = resp["result"]["document"]
    assert doc["moments"]["mean"] == pytest.approx(1.393469, abs=1e-6)
    assert doc["moments"]["variance_lower"] <= doc["moments"]["variance_upper"]
    assert doc["seed"] == 20240601
    assert doc["config_hash"] == load_config(CONFIGS / "drift_case.json").config_hash()
    assert doc["tool_version"] == "0.1.0"
    written = json.loads((tmp_path / "drift_case_moments.json").read_text())
    assert written == doc
    meta = json.loads((tmp_path / "drift_case_moments.meta.json").read_text())
    assert meta["artifact"] == "drift_case_moments.json"
    assert "created_at" in meta


def test_moments_in_qv_case_and_full_model(tmp_path):
    resp = _invoke("moments", {"config": str(CONFIGS / "qv_case.json")}, out_dir=str(tmp_path))
    moments = resp["result"]["document"]["moments"]
    assert moments["mean_upper"] == pytest.approx(0.864665, abs=1e-6)
    assert moments["mean_lower"] == pytest.approx(0.632121, abs=1e-6)
    assert moments["exact"] is False
    resp = _invoke("moments", {"config": str(CONFIGS / "full_model.yaml")}, out_dir=str(tmp_path))
    assert resp["error"]["type"] == "RegimeError"


def test_pde_and_cdf_commands(tmp_path):
    path = _small_config(tmp_path, thresholds=[0.5, 1.0, 1.5, 2.0])
    pde = _invoke("pde", {"config": str(path)}, out_dir=str(tmp_path))["result"]
    assert abs(pde["document"]["upper"] - 1.393469) <= 1e-2
    assert pde["document"]["lower"] <= pde["document"]["upper"] + 1e-9
    header = (tmp_path / "drift_case_pde_upper.csv").read_text().splitlines()[0]
    assert header == "t,x,u"
    meta = json.loads((tmp_path / "drift_case_pde.meta.json").read_text())
    assert meta["siblings"] == ["drift_case_pde_upper.csv", "drift_case_pde_lower.csv"]
    assert meta["stamp"] == {k: pde["document"][k] for k in ("tool_version", "config_hash", "seed")}

    cdf = _invoke("cdf", {"config": str(path), "width": 0.1}, out_dir=str(tmp_path))["result"]
    points = cdf["document"]["points"]
    assert [p["a"] for p in points] == [0.5, 1.0, 1.5, 2.0]
    assert all(p["lower"] <= p["upper"] + 1e-12 for p in points)


def test_simulate_upper_lower_commands(tmp_path):
    path = _small_config(tmp_path)
    sim = _invoke("simulate", {"config": str(path)}, out_dir=str(tmp_path))["result"]
    assert sim["document"]["estimate"]["n_paths"] == 3 * 4096
    rows = (tmp_path / "drift_case_simulate_paths.csv").read_text().splitlines()
    assert rows[0] == "path_index,terminal,running_min"
    assert len(rows) == 3 * 4096 + 1

    upper = _invoke("upper", {"config": str(path)}, out_dir=str(tmp_path))["result"]["document"]["estimate"]
    lower = _invoke("lower", {"config": str(path), "method": "bangbang"}, out_dir=str(tmp_path))["result"]["document"]["estimate"]
    assert abs(upper["value"] - 1.393469) <= 3.0 * upper["std_error"] + 5e-3
    assert abs(lower["value"] - 1.393469) <= 3.0 * lower["std_error"] + 1.5e-2


def test_converge_and_markov_commands(tmp_path):
    path = _small_config(tmp_path, meshes=[0.125, 0.0625, 0.03125])
    resp = _invoke("converge", {"config": str(path), "study": "strong_error"}, out_dir=str(tmp_path))
    study = resp["result"]["document"]["studies"]["strong_error"]
    assert study["errors"][-1] == 0.0
    assert (tmp_path / "drift_case_converge_strong_error.csv").read_text().startswith("h,error\n")

    markov = _invoke("markov-check", {"config": str(path)}, out_dir=str(tmp_path))["result"]["document"]
    assert markov["gamma"] == 0.5
    assert markov["discrepancy"] <= 2.0 * markov["oracle_error"] + 1e-4


def test_compare_is_deterministic_across_thread_counts(tmp_path):
    path = _small_config(tmp_path)
    outputs = []
    for threads in (1, 8):
        out = tmp_path / f"t{threads}"
        resp = _invoke("compare", {"config": str(path)}, out_dir=str(out), threads=threads)
        assert "result" in resp, resp
        outputs.append((out / "drift_case_compare.json").read_bytes())
    assert outputs[0] == outputs[1]


def test_compare_failure_is_a_tolerance_error(tmp_path, monkeypatch):
    failed = TriangulationReport(
        regime=Regime.DRIFT_ONLY,
        payoff="identity",
        x0=1.0,
        t_prime=1.0,
        oracle_exact=True,
        routes=[RouteValue(route="pde", side="upper", value=2.0, reference=1.0, discrepancy=1.0, tolerance=0.01, check="two_sided", ok=False)],
        ok=False,
    )
    monkeypatch.setattr(commands.analysis, "triangulation_report", lambda *a, **k: failed)
    resp = _invoke("compare", {"config": str(_small_config(tmp_path))}, out_dir=str(tmp_path))
    assert resp["error"]["type"] == "ToleranceError"
    assert (tmp_path / "drift_case_compare.json").exists()
    assert run(["compare", "--config", str(_small_config(tmp_path)), "--out-dir", str(tmp_path)], stderr=io.StringIO()) == 1


def test_seed_override_changes_stamp(tmp_path):
    resp = _invoke("moments", {"config": str(CONFIGS / "drift_case.json")}, out_dir=str(tmp_path), seed_override=7)
    doc = resp["result"]["document"]
    assert doc["seed"] == 7
    assert doc["config_hash"] != load_config(CONFIGS / "drift_case.json").config_hash()


def test_thread_resolution_order(monkeypatch):
    monkeypatch.setenv("GCIR_THREADS", "3")
    set_run_context(RunContext())
    assert resolve_threads() == 3
    set_run_context(RunContext(threads=5))
    assert resolve_threads() == 5
    monkeypatch.delenv("GCIR_THREADS")
    set_run_context(RunContext())
    assert resolve_threads() == 1


def test_cli_exit_codes(tmp_path):
    out, err = io.StringIO(), io.StringIO()
    assert run(["gfun", "--lo-sq", "1", "--hi-sq", "4", "--a", "-2"], stdout=out, stderr=err) == 0
    assert out.getvalue() == "-1\n"
    assert run(["gfun", "--lo-sq=1", "--hi-sq=4", "--a=-2"], stdout=io.StringIO(), stderr=err) == 0
    assert run(["frobnicate"], stderr=err) == 2
    assert "usage:" in err.getvalue()
    assert run(["moments"], stderr=io.StringIO()) == 2
    assert run(["moments", "--config", str(tmp_path / "missing.json")], stderr=io.StringIO()) == 2
    assert run(["moments", "--config", str(CONFIGS / "drift_case.json"), "--threads", "x"], stderr=io.StringIO()) == 2

    out = io.StringIO()
    code = run(["moments", "--config", str(CONFIGS / "drift_case.json"), "--out-dir", str(tmp_path)], stdout=out, stderr=io.StringIO())
    assert code == 0
    assert json.loads(out.getvalue())["moments"]["mean"] == pytest.approx(1.393469, abs=1e-6)
    code = run(["moments", "--config", str(CONFIGS / "full_model.yaml"), "--out-dir", str(tmp_path)], stderr=io.StringIO())
    assert code == 1


def test_config_and_params_errors_share_one_format(tmp_path):
    bad_key = tmp_path / "bad_key.json"
    bad_key.write_text(json.dumps({**json.loads((CONFIGS / "drift_case.json").read_text()), "n_pahts": 10}))
    config_error = _invoke("moments", {"config": str(bad_key)}, out_dir=str(tmp_path))["error"]
    params_error = _invoke("gfun", {"lo_sq": 1, "hi_sq": 4, "a": 1, "n_pahts": 10})["error"]
    assert config_error["type"] == params_error["type"] == "ValidationError"
    assert config_error["message"] == f"{bad_key}: {params_error['message']}"
