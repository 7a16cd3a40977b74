import json

import pytest
from hypothesis import given, settings, strategies as st

from nccz import cli
from nccz.experiments import ANCHORS, CATALOG
from nccz.records import CheckRecord


def small(experiment, **extra):
    pairs = {"experiment": experiment, "d": "2", "K": "3", "samples": "2"}
    pairs.update({k: str(v) for k, v in extra.items()})
    return cli.config_from_pairs(pairs)


# --- config ----------------------------------------------------------------

def test_minimal_config():
    cfg = cli.parse_config("experiment=cz_identities\nd=2\nK=4\n")
    assert cfg.grid.d == 2 and cfg.grid.K == 4
    assert cfg.grid.n == 1 and cfg.ensemble.samples == 20 and cfg.seed == 0
    assert cfg.lacunary.s_max is None


def test_comments_and_dotted_keys():
    cfg = cli.parse_config("# header\nexperiment = gundy  # trailing\ngrid.d=3\ntol.identity=1e-7\n")
    assert cfg.grid.d == 3 and cfg.tol.identity == 1e-7


def test_unknown_experiment_lists_valid_names():
    with pytest.raises(cli.ConfigError) as exc:
        cli.parse_config("experiment=nosuch\n")
    for name in CATALOG:
        assert name in str(exc.value)


@pytest.mark.parametrize("text,match", [
    ("d=2\n", "missing required key"),
    ("experiment=gundy\nbogus=1\n", "unknown key"),
    ("experiment=gundy\nd=x\n", "cannot read"),
    ("experiment=gundy\nd=0\n", "grid.d"),
    ("experiment=gundy\nn=2\nK=6\n", "n\\*K"),
    ("experiment=gundy\nlacunary.s_min=2\nlacunary.s_max=1\n", "s_min"),
    ("experiment=gundy\noperator.kind=hilbert\nn=2\nK=3\n", "Hilbert"),
    ("experiment=gundy\noperator.s=4\nK=4\n", "complexity"),
    ("experiment=gundy\noperator.kind=file\n", "operator.path"),
    ("experiment=gundy\ntol.exact=0\n", "tolerances"),
    ("experiment=gundy\nline without equals\n", "key=value"),
])
def test_rejections(text, match):
    with pytest.raises(cli.ConfigError, match=match):
        cli.parse_config(text)


@settings(max_examples=200)
@given(exp=st.sampled_from(sorted(CATALOG)), d=st.integers(1, 8), K=st.integers(2, 5),
       seed=st.integers(0, 10**6), s_min=st.integers(-6, 0), top=st.one_of(st.none(), st.integers(1, 6)),
       slack=st.floats(1e-15, 1e-3), side=st.sampled_from(["row", "column"]))
def test_canonical_roundtrip(exp, d, K, seed, s_min, top, slack, side):
    pairs = {"experiment": exp, "d": str(d), "K": str(K), "seed": str(seed), "lacunary.s_min": str(s_min),
             "lacunary.s_max": "auto" if top is None else str(s_min + top), "tol.slack": repr(slack),
             "operator.side": side}
    cfg = cli.config_from_pairs(pairs)
    text = cli.canonical(cfg)
    again = cli.parse_config(text)
    assert again == cfg
    assert cli.canonical(again) == text


# --- running and reports ---------------------------------------------------

def test_every_experiment_runs_clean():
    for name in CATALOG:
        res = cli.run_experiment(small(name))
        assert res.records, name
        assert res.failures == 0, [r for r in res.records if r.failed]
        for r in res.records:
            assert r.anchor == ANCHORS[r.name.split("[")[0]]


def test_cz_identities_scalar_all_pass():
    res = cli.run_experiment(small("cz_identities", d=1, samples=5))
    assert res.exit_code == 0
    assert any(r.name == "cz.commutative_off" for r in res.records)


def test_dilation_s0():
    res = cli.run_experiment(small("dilation_lemma"))
    rec = next(r for r in res.records if r.name == "dilation.s0")
    assert rec.status == "pass"


def test_report_bytes_deterministic():
    a = cli.render(cli.run_experiment(small("weak_type_scan", seed=5)), "json")
    b = cli.render(cli.run_experiment(small("weak_type_scan", seed=5)), "json")
    assert a == b
    c = cli.render(cli.run_experiment(small("weak_type_scan", seed=6)), "json")
    assert a != c


def test_parallel_matches_serial():
    a = cli.render(cli.run_experiment(small("gundy")), "json")
    b = cli.render(cli.run_experiment(small("gundy", jobs=2)), "json")
    assert json.loads(a)["records"] == json.loads(b)["records"]


def test_json_csv_counts_and_schema():
    res = cli.run_experiment(small("lacunary_identities"))
    doc = json.loads(cli.render(res, "json"))
    cli.validate_report(doc)
    rows = cli.records_from_csv(cli.render(res, "csv"))
    assert len(rows) == len(doc["records"]) == len(res.records)
    assert [r["name"] for r in rows] == [r["name"] for r in doc["records"]]
    text = cli.render(res, "summary")
    assert text.count("\n") == len(res.records) + 2


def test_empty_result_valid():
    res = cli.ExperimentResult(small("gundy"), [])
    doc = json.loads(cli.render(res, "json"))
    cli.validate_report(doc)
    assert doc["records"] == [] and doc["failures"] == 0 and res.exit_code == 0
    assert cli.records_from_csv(cli.render(res, "csv")) == []


def test_schema_rejects_bad_status():
    import jsonschema

    res = cli.ExperimentResult(small("gundy"), [CheckRecord("x", "a", 1.0, None, "maybe")])
    with pytest.raises(jsonschema.ValidationError):
        cli.validate_report(json.loads(cli.render(res, "json")))


def test_failure_sets_exit_code():
    # an impossible tolerance turns round-off into failures
    res = cli.run_experiment(small("cz_identities", **{"tol.identity": 1e-300}))
    assert res.failures > 0 and res.exit_code == 1


def test_unwritable_path(tmp_path):
    res = cli.ExperimentResult(small("gundy"), [])
    with pytest.raises(OSError, match="does not exist"):
        cli.emit_report(res, "json", tmp_path / "missing" / "r.json")


# --- entry point -----------------------------------------------------------

def test_main_writes_report(tmp_path, capsys):
    conf = tmp_path / "run.cfg"
    conf.write_text("experiment=cuculescu_bounds\nd=2\nK=3\nsamples=2\nseed=1\n")
    out = tmp_path / "r.json"
    code = cli.main(["--config", str(conf), "--out", str(out), "--seed", "3"])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["config"]["seed"] == 3
    cli.validate_report(doc)


def test_main_precedence(capsys):
    code = cli.main(["--experiment", "gundy", "--set", "experiment=cz_identities", "--set", "K=3",
                     "--set", "samples=1", "--format", "csv"])
    assert code == 0
    out = capsys.readouterr().out
    assert out.splitlines()[1].startswith("gundy,")


def test_main_errors(tmp_path, capsys):
    assert cli.main(["--set", "experiment=nosuch"]) == 2
    assert "unknown experiment" in capsys.readouterr().err
    assert cli.main(["--config", str(tmp_path / "absent.cfg")]) == 2
    assert cli.main(["--set", "experiment=gundy", "--set", "K=3", "--set", "samples=1",
                     "--out", str(tmp_path / "no" / "x.json")]) == 2
    assert cli.main(["--set", "experiment=cz_identities", "--set", "K=3", "--set", "samples=1",
                     "--set", "tol.identity=1e-300", "--format", "summary"]) == 1


def test_main_list(capsys):
    assert cli.main(["--list"]) == 0
    assert capsys.readouterr().out.split() == list(CATALOG)


def test_ledger_written(tmp_path):
    path = tmp_path / "ledger.jsonl"
    cli.run_experiment(small("truncation_probe", **{"probe.ledger": str(path)}))
    from nccz.probes import read_ledger, replay_ledger_record

    recs = read_ledger(path)
    assert recs
    r1, r2 = replay_ledger_record(recs[0]).ratios()
    assert (r1, r2) == (recs[0]["R1"], recs[0]["R2"])
