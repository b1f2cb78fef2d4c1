import json
import math
import shutil

import numpy as np
import pytest

from dpgranular import ClassSpec, builtin_granularity, canonical_metric, enumerate_class, load_config, parse_config, run_plan
from dpgranular.cache import cache_matrices, cached_canonical_metric, class_digest, clear_cache, load_cached
from dpgranular.cli import run
from dpgranular.config import build
from dpgranular.errors import CacheCorrupt, ParseError, SchemaVersionMismatch, UnresolvedReference

MINIMAL = {
    "schema_version": 1,
    "universe": ["a", "b"],
    "class": {"kind": "max_size", "size": 1},
    "granularities": {"U": {"kind": "unbounded"}},
    "maps": {"id": {"kind": "identity"}},
    "steps": [{"name": "s1", "map": "id", "flavor": "pure", "eps": 1.0, "metric": "U"}],
}


def dump(obj):
    return json.dumps(obj, indent=2)


def test_minimal_config_is_valid():
    doc = parse_config(dump(MINIMAL))
    built = build(doc)
    assert len(built.domain) == 3 and built.flavor == "pure"


def test_undefined_map_is_unresolved():
    cfg = json.loads(dump(MINIMAL))
    cfg["steps"][0]["map"] = "p9"
    with pytest.raises(UnresolvedReference) as exc:
        parse_config(dump(cfg))
    assert exc.value.name == "p9"


def test_schema_version_checked():
    cfg = dict(MINIMAL, schema_version=2)
    with pytest.raises(SchemaVersionMismatch):
        parse_config(dump(cfg))


def test_parse_error_carries_line_and_field():
    cfg = json.loads(dump(MINIMAL))
    cfg["steps"][0]["eps"] = -1
    with pytest.raises(ParseError) as exc:
        parse_config(dump(cfg))
    assert exc.value.field == "steps[0].eps" and exc.value.line is not None
    with pytest.raises(ParseError) as exc:
        parse_config('{"schema_version": 1,\n "universe": [}')
    assert exc.value.line == 2


def test_mixed_incompatible_flavours_rejected():
    cfg = json.loads(dump(MINIMAL))
    cfg["steps"].append({"name": "s2", "map": "id", "flavor": "gaussian", "mu": 1.0, "metric": "U"})
    with pytest.raises(ParseError):
        build(parse_config(dump(cfg)))


def test_example1_fixture_reproduces_failure(fixtures_dir):
    rep = run_plan(load_config(fixtures_dir / "example1_bounded_fail.json"), verify=True)
    assert not rep.all_verified
    failing = [v for v in rep.verification if not v["passed"]]
    assert {v["target"] for v in failing} == {"composed vs claim 1", "marginal 1 vs claim 1", "marginal 2 vs claim 1"}
    assert failing[0]["worst_pair_databases"] == ["{a,a,a}", "{a,a,b}"]
    assert rep.attempts[0]["failed_condition"].startswith("d^G-compatibility")
    assert rep.primary["fallback_from"] == [rep.attempts[0]["failed_condition"]]


def test_parallel_unbounded_report(fixtures_dir):
    rep = run_plan(load_config(fixtures_dir / "parallel_unbounded.json"))
    assert rep.primary["closed_form"] == "0.5·d^U"
    assert rep.primary["provenance"] == "independent best bound for disjoint inputs"
    assert rep.space["granularity_distances"] == {"dist(U,B)": 2.0, "dist(B,U)": math.inf}


def test_bounded_parallel_report(fixtures_dir):
    rep = run_plan(load_config(fixtures_dir / "bounded_parallel.json"))
    assert rep.primary["closed_form"] == "3.0·d^B"
    assert rep.primary["provenance"] == "bounded parallel composition"
    assert rep.attempts[0]["applied"] is False


def test_ultra_parallel_report(fixtures_dir):
    rep = run_plan(load_config(fixtures_dir / "ultra_parallel.json"))
    tilde = [r for r in rep.results if r["role"] == "d_tilde"][0]
    assert tilde["summary"]["max"] == math.sqrt(2.0)
    assert rep.primary["closed_form"] == "1.0·d^△"


def test_report_reproducible_by_direct_call(fixtures_dir):
    from dpgranular import best_bound_disjoint

    built = build(load_config(fixtures_dir / "parallel_unbounded.json"))
    b = best_bound_disjoint(built.plan, built.granularities["U"], [0.1, 0.5, 0.3])
    assert run_plan(built).primary["coefficient"] == b.coefficient


@pytest.mark.parametrize("name", ["parallel_unbounded", "bounded_parallel", "ultra_parallel", "example1_bounded_fail"])
def test_reports_are_byte_stable(fixtures_dir, name):
    doc = load_config(fixtures_dir / f"{name}.json")
    a = run_plan(doc, verify=True).to_json()
    b = run_plan(load_config(fixtures_dir / f"{name}.json"), verify=True).to_json()
    assert a == b
    json.loads(a)


def test_delta_warning_surfaces():
    cfg = {
        "schema_version": 1,
        "universe": ["a"],
        "class": {"kind": "max_size", "size": 14},
        "granularities": {"U": {"kind": "unbounded"}},
        "maps": {"id": {"kind": "identity"}},
        "steps": [{"name": "s1", "map": "id", "flavor": "approximate", "eps": 1.0, "delta": 1e-5, "metric": "U"}],
    }
    rep = run_plan(parse_config(dump(cfg)))
    assert rep.primary["delta_ge_1_pairs"] > 0
    assert any("delta >= 1" in w for w in rep.warnings)


# ---------------------------------------------------------------------------
# cache


def test_cache_round_trip(tmp_path):
    c = enumerate_class(ClassSpec.max_size("abc", 3))
    gs = [builtin_granularity(c, "unbounded"), builtin_granularity(c, "bounded")]
    paths = cache_matrices(c, gs, tmp_path)
    assert len(paths) == 2 and len({p.name.split("-")[0] for p in paths}) == 1
    for g in gs:
        hit = load_cached(g, tmp_path)
        assert np.array_equal(hit.dist, canonical_metric(g).dist)


def test_cache_miss_on_changed_universe(tmp_path):
    c = enumerate_class(ClassSpec.max_size("abc", 2))
    cache_matrices(c, [builtin_granularity(c, "unbounded")], tmp_path)
    other = enumerate_class(ClassSpec.max_size("abd", 2))
    assert class_digest(c) != class_digest(other)
    assert load_cached(builtin_granularity(other, "unbounded"), tmp_path) is None


def test_cache_corruption_detected_and_recomputed(tmp_path):
    c = enumerate_class(ClassSpec.max_size("ab", 2))
    g = builtin_granularity(c, "bounded")
    (path,) = cache_matrices(c, [g], tmp_path)
    body = json.loads(path.read_text())
    body["values"][1] = 42.0
    path.write_text(json.dumps(body))
    with pytest.raises(CacheCorrupt):
        load_cached(g, tmp_path)
    assert np.array_equal(cached_canonical_metric(g, tmp_path).dist, canonical_metric(g).dist)
    assert load_cached(g, tmp_path) is not None
    assert clear_cache(tmp_path) == 1


# ---------------------------------------------------------------------------
# CLI


def test_cli_exit_codes(fixtures_dir, tmp_path, capsys):
    out = tmp_path / "r.json"
    assert run(["verify", "--config", str(fixtures_dir / "bounded_parallel.json"), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["results"][0]["closed_form"] == "3.0·d^B"
    assert run(["verify", "--config", str(fixtures_dir / "example1_bounded_fail.json"), "--out", str(out)]) == 2
    assert run(["plan", "--config", str(tmp_path / "missing.json")]) == 1
    assert "error" in capsys.readouterr().err


def test_cli_plan_inspect_and_cache(fixtures_dir, tmp_path):
    cfg = str(fixtures_dir / "parallel_unbounded.json")
    cache = tmp_path / "cache"
    assert run(["cache", "warm", "--config", cfg, "--cache-dir", str(cache), "--out", str(tmp_path / "w.json")]) == 0
    assert len(json.loads((tmp_path / "w.json").read_text())["written"]) == 2
    assert run(["inspect", "--config", cfg, "--cache-dir", str(cache), "--out", str(tmp_path / "i.json")]) == 0
    info = json.loads((tmp_path / "i.json").read_text())
    assert info["granularity_distances"]["dist(B,U)"] == "inf"
    assert info["partition"]["compatible_with"]["unbounded"] is True
    assert run(["plan", "--config", cfg, "--cache-dir", str(cache), "--out", str(tmp_path / "p.json")]) == 0
    a = (tmp_path / "p.json").read_text()
    assert run(["plan", "--config", cfg, "--out", str(tmp_path / "q.json")]) == 0
    assert a == (tmp_path / "q.json").read_text()
    assert run(["cache", "clear", "--cache-dir", str(cache), "--out", str(tmp_path / "c.json")]) == 0
    assert json.loads((tmp_path / "c.json").read_text())["removed"] == 2


def test_cli_pairs_and_profile_flags(fixtures_dir, tmp_path):
    cfg = str(fixtures_dir / "bounded_parallel.json")
    out = tmp_path / "r.json"
    assert run(["verify", "--config", cfg, "--pairs", "neighbors", "--tolerance-profile", "strict", "--seed", "3", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["settings"]["pairs"] == "neighbors" and rep["settings"]["seed"] == 3
    assert all(v["tolerance"] == 1e-12 for v in rep["verification"])
