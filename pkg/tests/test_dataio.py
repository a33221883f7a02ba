import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irtforge.calibrate import ItemEstimate, ItemParams
from irtforge.dataio import (Convergence, DataError, Item, ItemBank, ResponseMatrix, ResultBundle,
                             dumps_canonical, load_bundle, load_item_bank, load_responses,
                             write_bundle, write_item_bank, write_responses)
from irtforge.fpc import AbilityEstimates, LatentDist
from irtforge.calibrate import make_grid

from conftest import simulate


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_wide_csv_with_missing(tmp_path):
    p = write(tmp_path / "r.csv", "respondent_id,source,q1,q2\nr1,human,1,0\nr2,human,NA,1\n")
    m = load_responses(p, "wide_csv")
    assert m.n_respondents == 2 and m.n_items == 2
    assert m.n_missing == 1
    assert np.isnan(m.data[1, 0]) and m.data[1, 1] == 1.0


def test_empty_cell_is_missing(tmp_path):
    p = write(tmp_path / "r.csv", "respondent_id,source,q1,q2\nr1,human,,1\n")
    assert load_responses(p).n_missing == 1


@pytest.mark.parametrize("cell", ["2", "yes", "0.5", "-1", "na"])
def test_malformed_cell_names_file_and_line(tmp_path, cell):
    p = write(tmp_path / "r.csv", f"respondent_id,source,q1\nr1,human,1\nr2,human,{cell}\n")
    with pytest.raises(DataError) as err:
        load_responses(p)
    assert err.value.line == 3
    assert str(p) in str(err.value)


def test_duplicate_respondent_rejected(tmp_path):
    p = write(tmp_path / "r.csv", "respondent_id,source,q1\nr1,human,1\nr1,human,0\n")
    with pytest.raises(DataError, match="duplicate respondent_id"):
        load_responses(p)


def test_all_missing_row_rejected(tmp_path):
    p = write(tmp_path / "r.csv", "respondent_id,source,q1,q2\nr1,human,1,0\nr2,human,NA,\n")
    with pytest.raises(DataError, match="no observed"):
        load_responses(p)


def test_unknown_column_vs_bank(tmp_path):
    p = write(tmp_path / "r.csv", "respondent_id,source,q1,zz\nr1,human,1,0\n")
    bank = ItemBank((Item("q1"), Item("q2")))
    with pytest.raises(DataError, match="zz"):
        load_responses(p, bank=bank)


def test_bank_defines_column_order(tmp_path):
    p = write(tmp_path / "r.csv", "respondent_id,source,q2,q1\nr1,human,1,0\n")
    bank = ItemBank((Item("q1"), Item("q2"), Item("q3")))
    m = load_responses(p, bank=bank)
    assert m.item_ids == ("q1", "q2", "q3")
    assert m.data[0, 0] == 0.0 and m.data[0, 1] == 1.0 and np.isnan(m.data[0, 2])


def test_long_duplicate_record(tmp_path):
    lines = [{"respondent_id": "r1", "source": "human", "item_id": "q1", "score": 1},
             {"respondent_id": "r1", "source": "human", "item_id": "q1", "score": 0}]
    p = write(tmp_path / "r.jsonl", "\n".join(json.dumps(r) for r in lines) + "\n")
    with pytest.raises(DataError, match="duplicate record") as err:
        load_responses(p, "long_jsonl")
    assert err.value.line == 2


def test_long_bad_score(tmp_path):
    rec = {"respondent_id": "r1", "source": "h", "item_id": "q1", "score": True}
    p = write(tmp_path / "r.jsonl", json.dumps(rec) + "\n")
    with pytest.raises(DataError, match="score"):
        load_responses(p, "long")


def test_long_source_counts(tmp_path):
    rng = np.random.default_rng(0)
    lines = [json.dumps({"respondent_id": f"g{i}", "source": "gpt3.5", "item_id": f"q{j + 1}",
                         "score": int(rng.random() < 0.5)})
             for i in range(150) for j in range(20)]
    p = write(tmp_path / "r.jsonl", "\n".join(lines) + "\n")
    m = load_responses(p, "long_jsonl")
    assert m.source_counts() == {"gpt3.5": 150}
    assert m.n_items == 20


def test_wide_and_long_agree(tmp_path):
    m = simulate(n=40, missing_rate=0.25, seed=3)
    bank = ItemBank(tuple(Item(i) for i in m.item_ids))
    write_responses(m, tmp_path / "r.csv", "wide_csv")
    write_responses(m, tmp_path / "r.jsonl", "long_jsonl")
    wide = load_responses(tmp_path / "r.csv", "wide", bank)
    long = load_responses(tmp_path / "r.jsonl", "long", bank)
    assert wide == long == m


def test_comment_lines_skipped(tmp_path):
    m = simulate(n=5, seed=1)
    write_responses(m, tmp_path / "r.csv", "wide", comment="provenance line")
    assert (tmp_path / "r.csv").read_text().startswith("# provenance line\n")
    assert load_responses(tmp_path / "r.csv") == m


def test_loading_keeps_every_row(tmp_path):
    m = simulate(n=123, missing_rate=0.4, seed=9)
    write_responses(m, tmp_path / "r.csv")
    back = load_responses(tmp_path / "r.csv")
    assert back.n_respondents == 123 and back.n_missing == m.n_missing


def test_missing_file():
    with pytest.raises(DataError, match="not found"):
        load_responses("/nonexistent/r.csv")


def test_item_bank(tmp_path):
    bank = ItemBank(tuple(Item(f"q{j}", stem=f"stem {j}") for j in range(1, 21)))
    write_item_bank(bank, tmp_path / "b.json")
    back = load_item_bank(tmp_path / "b.json")
    assert back == bank and len(back.items) == 20
    assert not back.has_fixed_difficulties


def test_item_bank_fixed(tmp_path):
    bank = ItemBank.from_difficulties(np.linspace(-1, 1, 20))
    assert bank.has_fixed_difficulties
    np.testing.assert_allclose(bank.fixed_difficulties(), np.linspace(-1, 1, 20))
    items = list(bank.items)
    items[7] = Item(items[7].item_id)
    partial = ItemBank(tuple(items))
    with pytest.raises(DataError, match="q8"):
        partial.fixed_difficulties()


@pytest.mark.parametrize("doc,msg", [
    ({"items": []}, "no items"),
    ({"items": [{"item_id": "a"}, {"item_id": "a"}]}, "duplicate"),
    ({"nope": 1}, "items"),
])
def test_item_bank_errors(tmp_path, doc, msg):
    p = write(tmp_path / "b.json", json.dumps(doc))
    with pytest.raises(DataError, match=msg):
        load_item_bank(p)


def test_response_matrix_is_immutable():
    m = simulate(n=3, seed=1)
    with pytest.raises(ValueError):
        m.data[0, 0] = 1.0


def _bundle(betas, thetas=None):
    ids = [f"q{j + 1}" for j in range(len(betas))]
    params = ItemParams.from_arrays(ids, betas, np.full(len(betas), 0.2))
    ability = None
    if thetas is not None:
        ability = AbilityEstimates([f"r{i}" for i in range(len(thetas))], ["h"] * len(thetas),
                                   thetas, np.full(len(thetas), 0.3), np.full(len(thetas), 4))
    return ResultBundle(params, Convergence(12, 3.2e-5, True), LatentDist.from_grid(make_grid()),
                        ability, 42, {"responses": "sha256:abc"})


def test_bundle_bytes_are_stable(tmp_path):
    b = _bundle([0.123456789, -1.5, 2.0], [0.5, -0.25])
    write_bundle(b, tmp_path / "a.json")
    write_bundle(b, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    text = (tmp_path / "a.json").read_text()
    assert "0.123457" in text and "0.123456789" not in text


def test_bundle_with_nan_refused(tmp_path):
    params = ItemParams([ItemEstimate("q1", 0.0, None, "ok")])
    object.__setattr__(params.items[0], "beta", math.nan)
    b = ResultBundle(params, Convergence(1, 0.0, True))
    with pytest.raises(ValueError, match="non-finite"):
        write_bundle(b, tmp_path / "x.json")
    assert not (tmp_path / "x.json").exists()


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-6, 6, allow_nan=False), min_size=1, max_size=25),
       st.lists(st.floats(-5, 5, allow_nan=False), min_size=0, max_size=10))
def test_bundle_round_trip(tmp_path_factory, betas, thetas):
    path = tmp_path_factory.mktemp("rt") / "b.json"
    b = _bundle(betas, thetas or None)
    write_bundle(b, path)
    back = load_bundle(path)
    for x, y in zip(back.item_params.betas, betas):
        assert float(f"{x:.6g}") == float(f"{y:.6g}")
    assert back.item_params.statuses == b.item_params.statuses
    assert back.convergence.cycles == 12 and back.convergence.converged
    assert back.seed == 42 and back.inputs == {"responses": "sha256:abc"}
    if thetas:
        np.testing.assert_allclose(back.ability.theta_hat, thetas, rtol=1e-5, atol=1e-12)
    assert back.latent.grid.size == 41
    assert back.latent.sd == pytest.approx(b.latent.sd, rel=1e-5)


def test_canonical_json():
    assert dumps_canonical({"b": 1.0, "a": [-0.0, 1e-7, 123456789.0]}) == \
        '{"a":[0,1e-07,1.23457e+08],"b":1}\n'
    with pytest.raises(ValueError):
        dumps_canonical({"x": math.inf})


def test_matrix_invariants():
    with pytest.raises(DataError, match="0, 1 or missing"):
        ResponseMatrix(["a"], ["h"], ["q1"], [[0.5]])
    with pytest.raises(DataError, match="duplicate item_id"):
        ResponseMatrix(["a"], ["h"], ["q1", "q1"], [[0, 1]])
