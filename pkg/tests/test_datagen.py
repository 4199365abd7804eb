import numpy as np
import pytest

from plr import datagen
from plr.datagen import (
    CorruptionError,
    DatasetSchema,
    LoadError,
    PartialDataset,
    SplitError,
    corrupt,
    load_csv,
    make_splits,
    preprocess,
    read_jsonl,
    split,
    split_sizes,
    synth_linear,
    write_jsonl,
)
from plr.numeric import make_rng

SCHEMA = DatasetSchema.from_dict({
    "columns": [
        {"name": "color", "kind": "categorical", "levels": ["r", "g", "b"]},
        {"name": "pct", "kind": "bounded", "lo": 0, "hi": 100},
        {"name": "x"},
        {"name": "flat"},
        {"name": "y"},
    ],
    "target": "y",
})


def _write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


@pytest.fixture
def toy(tmp_path):
    rows = ["color,pct,x,flat,y"]
    rng = np.random.default_rng(0)
    for i in range(20):
        rows.append(f"{'rgb'[i % 3]},{rng.uniform(0, 100):.3f},{rng.normal():.5f},1.0,{i}")
    return load_csv(_write(tmp_path, "\n".join(rows) + "\n"), SCHEMA)


def test_bundled_abalone_shape():
    csv, schema = datagen.bundled_paths("abalone")
    table = load_csv(csv, DatasetSchema.load(schema))
    assert table.n_rows == 4177 and len(table.columns) == 8
    assert split_sizes(4177) == (2507, 835, 835)


def test_bundled_concrete_shape():
    csv, schema = datagen.bundled_paths("concrete")
    table = load_csv(csv, DatasetSchema.load(schema))
    assert table.n_rows == 1030 and len(table.columns) == 8
    assert split_sizes(1030) == (618, 206, 206)


def test_load_errors(tmp_path):
    with pytest.raises(LoadError, match="empty"):
        load_csv(_write(tmp_path, ""), SCHEMA)
    with pytest.raises(LoadError, match="missing column"):
        load_csv(_write(tmp_path, "color,pct,x,y\nr,1,2,3\n"), SCHEMA)
    with pytest.raises(LoadError, match=r":2: column 'x' has unparseable"):
        load_csv(_write(tmp_path, "color,pct,x,flat,y\nr,1,abc,1,3\n"), SCHEMA)
    with pytest.raises(LoadError, match="unknown level 'q'"):
        load_csv(_write(tmp_path, "color,pct,x,flat,y\nq,1,2,1,3\n"), SCHEMA)
    with pytest.raises(LoadError):
        DatasetSchema.load(tmp_path / "nope.json")


def test_header_only_file_is_rejected_by_split(tmp_path):
    table = load_csv(_write(tmp_path, "color,pct,x,flat,y\n"), SCHEMA)
    assert table.n_rows == 0
    with pytest.raises(SplitError):
        split(table.n_rows, make_rng(0))


def test_quoted_fields_follow_rfc4180(tmp_path):
    schema = DatasetSchema.from_dict({"columns": [{"name": "a b"}, {"name": "y"}], "target": "y"})
    table = load_csv(_write(tmp_path, '"a b","y"\r\n"1.5","2"\r\n'), schema)
    assert table.columns["a b"][0] == 1.5 and table.target[0] == 2


def test_split_sizes_and_determinism():
    assert split_sizes(10) == (6, 2, 2)
    a = split(100, make_rng(3))
    b = split(100, make_rng(3))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    allidx = np.concatenate(a)
    assert np.array_equal(np.sort(allidx), np.arange(100))


def test_preprocess(toy):
    parts = [toy.take(np.arange(0, 12)), toy.take(np.arange(12, 16)), toy.take(np.arange(16, 20))]
    (tr, va, te), tf = preprocess(*parts)
    assert tf.dropped == ["flat"]
    assert tf.feature_names == ["color=r", "color=g", "color=b", "pct", "x"]
    assert np.all(tr[:, :3].sum(axis=1) == 1)
    assert abs(tr[:, 4].mean()) < 1e-9 and abs(tr[:, 4].std(ddof=1) - 1) < 1e-12
    assert np.all((tr[:, 3] >= 0) & (tr[:, 3] <= 1))
    # held-out data reuses train statistics
    assert abs(te[:, 4].mean()) > 1e-6


def test_corrupt_containment_and_size():
    y = np.linspace(0, 10, 50)
    c0 = corrupt(y, 0, (0, 10), make_rng(0))
    assert c0.shape == (50, 1) and np.array_equal(c0[:, 0], y)
    c = corrupt(y, 4, (0, 10), make_rng(0))
    assert c.shape == (50, 5)
    assert all(yi in row for yi, row in zip(y, c))
    positions = [int(np.flatnonzero(row == yi)[0]) for yi, row in zip(y, c)]
    assert len(set(positions)) > 1
    with pytest.raises(CorruptionError):
        corrupt(y, 2, (3, 3), make_rng(0))
    with pytest.raises(CorruptionError):
        corrupt(y, -1, (0, 1), make_rng(0))


def test_false_labels_are_uniform_over_span():
    y = np.full(25_000, 2.0)
    c = corrupt(y, 4, (0.0, 1.0), make_rng(1))
    false = c[c != 2.0]
    assert false.size == 100_000
    assert abs(false.mean() - 0.5) < 0.005 and false.min() > 0 and false.max() < 1


def test_no_false_label_repeats_across_sets():
    c = corrupt(np.zeros(10_000) - 1, 3, (0.0, 1.0), make_rng(2))
    false = c[c != -1]
    assert np.unique(false).size == false.size


def test_synth_linear():
    X, y = synth_linear(1, [2.0], 1.0, (3, 3), make_rng(0))
    assert X.shape == (1, 1) and y[0] == 7
    X, y = synth_linear(200, [1.0, -3.0], 0.5, (-2, 2), make_rng(0))
    sol = np.linalg.lstsq(np.column_stack([X, np.ones(200)]), y, rcond=None)[0]
    assert np.allclose(sol, [1.0, -3.0, 0.5], atol=1e-12)


def test_make_splits_protocol(toy):
    tr, va, te = make_splits(toy, 3, seed=5)
    assert (len(tr), len(va), len(te)) == (12, 4, 4)
    assert tr.n_candidates == 4 and va.n_candidates == 4 and te.n_candidates == 1
    assert np.array_equal(te.candidates[:, 0], te.y_true)
    lo, hi = tr.y_true.min(), tr.y_true.max()
    false = tr.candidates[tr.candidates != tr.y_true[:, None]]
    assert np.all((false >= lo) & (false <= hi))
    _, va_clean, _ = make_splits(toy, 3, seed=5, corrupt_validation=False)
    assert va_clean.n_candidates == 1
    again = make_splits(toy, 3, seed=5)
    assert np.array_equal(again[0].candidates, tr.candidates)


def test_jsonl_round_trip(tmp_path):
    ds = PartialDataset(np.array([[0.1, 1 / 3]]), np.array([[1.0, 2 / 7]]), np.array([1.0]))
    write_jsonl(tmp_path / "d.jsonl", ds)
    back = read_jsonl(tmp_path / "d.jsonl")
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.candidates, ds.candidates)
    (tmp_path / "bad.jsonl").write_text('{"features": [1]}\n')
    with pytest.raises(LoadError, match="bad.jsonl:1"):
        read_jsonl(tmp_path / "bad.jsonl")
