import csv

import numpy as np
import pytest

from coxknock.data import BINARY, CONTINUOUS, EmptyDataError, SchemaError
from coxknock.pbc import (BINARY_FEATURES, CONTINUOUS_FEATURES, SOURCE_COLUMNS, FrequencyTable,
                          PbcConfig, load_pbc_raw, pbc_frequency_experiment, preprocess_pbc)


@pytest.fixture(scope="module")
def raw():
    return load_pbc_raw()


@pytest.fixture(scope="module")
def pbc(raw):
    return preprocess_pbc(raw)


def raw_row(**over):
    row = {c: "1" for c in SOURCE_COLUMNS}
    row.update(time="400", status="2", trt="1", sex="f", edema="0", stage="3")
    row.update({k: str(v) for k, v in over.items()})
    return row


def as_raw(rows):
    return {c: [r[c] for r in rows] for c in rows[0]}


def test_census(pbc):
    assert pbc.n == 258 and pbc.p == 20
    assert set(pbc.names) == set(BINARY_FEATURES) | set(CONTINUOUS_FEATURES)
    assert sum(k == BINARY for k in pbc.kinds) == 10
    assert sum(k == CONTINUOUS for k in pbc.kinds) == 10
    assert int(pbc.event.sum()) == 111


def test_preprocessing_deterministic(raw, pbc):
    again = preprocess_pbc(raw)
    assert np.array_equal(again.x, pbc.x) and np.array_equal(again.time, pbc.time)


def test_binary_columns_are_indicators(pbc):
    for j, k in enumerate(pbc.kinds):
        if k == BINARY:
            assert set(np.unique(pbc.x[:, j])) <= {0.0, 1.0}


def col(d, name):
    return d.x[:, d.names.index(name)]


def test_edema_coding():
    rows = [raw_row(edema=e) for e in ("0", "0.5", "1")]
    d = preprocess_pbc(as_raw(rows))
    assert col(d, "Edema-treated").tolist() == [0, 1, 0]
    assert col(d, "Edema-resistant").tolist() == [0, 0, 1]


def test_stage_coding():
    rows = [raw_row(stage=s) for s in ("1", "2", "3", "4")]
    d = preprocess_pbc(as_raw(rows))
    assert [tuple(d.x[i, [d.names.index(f"Stage-{s}") for s in (2, 3, 4)]]) for i in range(4)] == [
        (0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]


def test_transplant_and_incomplete_rows_dropped():
    rows = [raw_row(), raw_row(status="1"), raw_row(copper="NA"), raw_row(status="0")]
    d = preprocess_pbc(as_raw(rows))
    assert d.n == 2 and d.n_dropped == 2
    assert d.event.tolist() == [1.0, 0.0]


def test_missing_column_is_schema_error():
    raw = as_raw([raw_row()])
    del raw["copper"]
    with pytest.raises(SchemaError, match="copper"):
        preprocess_pbc(raw)


def test_no_rows_left():
    with pytest.raises(EmptyDataError):
        preprocess_pbc(as_raw([raw_row(status="1")]))


def test_missing_column_in_file(tmp_path):
    p = tmp_path / "pbc.csv"
    p.write_text("time,status\n1,2\n")
    with pytest.raises(SchemaError):
        load_pbc_raw(p)


def test_single_run_frequencies(tmp_path, pbc):
    table = pbc_frequency_experiment(PbcConfig(runs=1, M=2, include_single_run=True), dataset=pbc)
    assert set(table.frequencies.tolist()) <= {0.0, 1.0}
    assert table.indicators.shape == (1, 20) and table.single_run_indicators.shape == (1, 20)


def test_frequency_table_outputs(tmp_path):
    ind = np.array([[1, 0, 1], [1, 0, 0], [1, 1, 0], [0, 0, 0]], dtype=np.int8)
    t = FrequencyTable(("a", "b", "c"), ind)
    assert np.allclose(t.frequencies, ind.mean(axis=0))
    assert t.ordered() == [("a", 0.75), ("b", 0.25), ("c", 0.25)]
    t.write_frequency_csv(tmp_path / "f.csv")
    t.write_indicator_csv(tmp_path / "i.csv")
    f = list(csv.reader((tmp_path / "f.csv").open()))
    assert f[0] == ["feature", "frequency", "rank"] and f[1] == ["a", "0.75", "1"]
    i = list(csv.reader((tmp_path / "i.csv").open()))
    assert i[0] == ["run", "a", "b", "c"] and len(i) == 5
    assert [sum(int(v) for v in r[1:]) for r in i[1:]] == ind.sum(axis=1).tolist()


def test_config_validation():
    with pytest.raises(ValueError):
        PbcConfig(runs=0)
