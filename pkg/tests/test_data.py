import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coxknock.data import (BINARY, CONTINUOUS, ColumnKind, DataError, Dataset, EmptyDataError,
                           ParseError, Schema, SchemaError, load_csv_dataset, to_model_matrix)

SCHEMA = {"time": "t", "event": "d", "columns": {"age": "continuous", "grp": "categorical"}}


def write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_three_rows(tmp_path):
    p = write(tmp_path, "t,d,age,grp\n1.5,1,40,a\n2,0,51,b\n3,1,62,a\n")
    d = load_csv_dataset(p, SCHEMA)
    assert d.n == 3 and d.p == 2 and d.n_dropped == 0
    assert d.kinds[1].levels == ("a", "b")
    assert d.x[:, 1].tolist() == [0.0, 1.0, 0.0]
    assert d.event.tolist() == [1, 0, 1]


def test_row_with_missing_cell_is_dropped(tmp_path):
    p = write(tmp_path, "t,d,age,grp\n1.5,1,40,a\n2,0,,b\n3,1,62,b\n")
    d = load_csv_dataset(p, SCHEMA)
    assert d.n == 2 and d.n_dropped == 1


def test_unused_missing_columns_are_ignored(tmp_path):
    p = write(tmp_path, "t,d,age,grp,junk\n1.5,1,40,a,\n2,0,3,b,NA\n")
    assert load_csv_dataset(p, SCHEMA).n == 2


def test_malformed_number_names_row_and_column(tmp_path):
    p = write(tmp_path, "t,d,age,grp\n1.5,1,forty,a\n2,0,3,b\n")
    with pytest.raises(ParseError, match=r"row 2, column 'age'"):
        load_csv_dataset(p, SCHEMA)


def test_unknown_declared_level(tmp_path):
    p = write(tmp_path, "t,d,age,grp\n1.5,1,4,a\n2,0,3,c\n")
    schema = dict(SCHEMA, columns={"age": "continuous", "grp": ["a", "b"]})
    with pytest.raises(SchemaError, match="unknown level"):
        load_csv_dataset(p, schema)


def test_schema_column_not_in_header(tmp_path):
    p = write(tmp_path, "t,d,age\n1,1,2\n")
    with pytest.raises(SchemaError):
        load_csv_dataset(p, SCHEMA)


def test_no_usable_rows(tmp_path):
    p = write(tmp_path, "t,d,age,grp\n1,1,,a\n")
    with pytest.raises(EmptyDataError):
        load_csv_dataset(p, SCHEMA)


def test_nonpositive_time_rejected(tmp_path):
    p = write(tmp_path, "t,d,age,grp\n0,1,4,a\n2,0,3,b\n")
    with pytest.raises(ParseError):
        load_csv_dataset(p, SCHEMA)


def test_schema_from_dict_requires_entries():
    with pytest.raises(SchemaError):
        Schema.from_dict({"time": "t", "columns": {}})


def test_load_is_deterministic(tmp_path):
    p = write(tmp_path, "t,d,age,grp\n1.5,1,40,a\n2,0,51,b\n3,1,62,a\n")
    assert load_csv_dataset(p, SCHEMA).to_json() == load_csv_dataset(p, SCHEMA).to_json()


def test_numeric_level_labels_normalized(tmp_path):
    p = write(tmp_path, "t,d,age,grp\n1,1,4,1.0\n2,0,3,0\n3,0,3,1\n")
    d = load_csv_dataset(p, SCHEMA)
    assert d.kinds[1].levels == ("0", "1")


# --- validation -------------------------------------------------------------

def test_column_kind_invariants():
    with pytest.raises(SchemaError):
        ColumnKind.categorical(["a"])
    with pytest.raises(SchemaError):
        ColumnKind.categorical(["a", "a"])


@pytest.mark.parametrize("kwargs", [
    dict(time=[1.0, 0.0]),
    dict(event=[1, 2]),
    dict(x=[[0.0], [2.0]]),
    dict(x=[[np.nan], [1.0]]),
    dict(time=[1.0]),
])
def test_dataset_rejects_invalid(kwargs):
    base = dict(x=[[0.0], [1.0]], kinds=(BINARY,), time=[1.0, 2.0], event=[1, 0], names=("a",))
    base.update(kwargs)
    with pytest.raises(DataError):
        Dataset(**base)


def test_dataset_is_read_only():
    d = Dataset([[0.0], [1.0]], (BINARY,), [1.0, 2.0], [1, 0], ("a",))
    with pytest.raises(ValueError):
        d.x[0, 0] = 1.0


# --- encoding ---------------------------------------------------------------

def test_all_continuous_identity():
    x = np.arange(10.0).reshape(2, 5)
    mm = to_model_matrix(Dataset(x, (CONTINUOUS,) * 5, [1, 2], [1, 1], tuple("abcde")))
    assert mm.q == 5 and mm.column_map == (0, 1, 2, 3, 4)
    assert np.array_equal(mm.values, x)


def test_binary_one_column():
    kind = ColumnKind.categorical(["A", "B"])
    mm = to_model_matrix(Dataset([[0.0], [1.0], [1.0]], (kind,), [1, 2, 3], [1, 0, 1], ("g",)))
    assert mm.q == 1 and mm.values[:, 0].tolist() == [0.0, 1.0, 1.0]


def test_three_levels_round_trip():
    kind = ColumnKind.categorical(["x", "y", "z"])
    codes = np.array([0, 1, 2, 2, 0, 1], dtype=float)
    mm = to_model_matrix(Dataset(codes[:, None], (kind,), np.arange(1.0, 7.0), np.ones(6), ("g",)))
    assert mm.q == 2 and mm.column_map == (0, 0)
    # reconstruct the level from the reference-coded dummies
    rebuilt = mm.values @ np.array([1.0, 2.0])
    assert np.array_equal(rebuilt, codes)
    assert mm.column_names == ("g[y]", "g[z]")


@given(st.lists(st.integers(2, 5) | st.just(0), min_size=1, max_size=8))
def test_grouping_recovers_feature_count(levels):
    n = 12
    rng = np.random.default_rng(len(levels))
    kinds, cols = [], []
    for L in levels:
        if L == 0:
            kinds.append(CONTINUOUS)
            cols.append(rng.standard_normal(n))
        else:
            kinds.append(ColumnKind.categorical([str(i) for i in range(L)]))
            cols.append(rng.integers(0, L, n).astype(float))
    d = Dataset(np.column_stack(cols), tuple(kinds), np.ones(n), np.ones(n), tuple(f"f{i}" for i in range(len(levels))))
    mm = to_model_matrix(d)
    groups = mm.groups(d.p)
    assert len(groups) == d.p and all(groups)
    assert mm.q == sum(1 if L == 0 else L - 1 for L in levels)
