import numpy as np
import pytest

from ervq import diagnostics as dg
from ervq.errors import ErvqIOError, InputError
from ervq.formats import write_indices
from ervq.numerics import Rng
from ervq.rvq import RvqStack, rvq_quantize
from ervq.vq import Codebook


def test_utilization_examples():
    assert dg.utilization_rate([5, 0, 3, 0]) == 0.5
    assert dg.utilization_rate([1, 2, 3]) == 1.0


def test_perplexity_examples():
    assert dg.perplexity([3, 3, 3, 3]) == 4.0
    assert dg.perplexity([0, 9, 0]) == 1.0
    assert dg.perplexity([2, 2, 0, 0]) == 2.0
    with pytest.raises(InputError):
        dg.perplexity([0, 0])


def test_bitrate_efficiency_examples():
    assert dg.bitrate_efficiency([[1, 1, 1, 1], [2, 2, 2, 2]]) == 1.0
    assert dg.bitrate_efficiency([[1, 1, 0, 0]]) == 0.5
    with pytest.raises(InputError):
        dg.bitrate_efficiency([[1, 1], [0, 0]])
    with pytest.raises(InputError):
        dg.bitrate_efficiency([])


def test_metric_properties():
    rng = Rng(1)
    for _ in range(100):
        K = int(rng.integers(16)) + 2
        c = rng.integers(5, size=K) * rng.integers(2, size=K)
        if c.sum() == 0:
            continue
        st = dg.CodebookStats.from_counts(c)
        assert st.counts.sum() == st.total
        assert 1 <= st.perplexity <= K + 1e-9
        if abs(st.perplexity - K) < 1e-9:
            assert st.utilization == 1.0
        c2 = rng.integers(5, size=K) + 1
        be = dg.bitrate_efficiency([c, c2])
        assert be == pytest.approx(dg.bitrate_efficiency([c2[::-1], c[::-1]]), abs=1e-15)


def test_report_from_file_equals_in_memory(tmp_path):
    rng = Rng(2)
    idx = rng.integers(8, size=(500, 3))
    write_indices(tmp_path / "i.bin", idx, 8)
    assert dg.report_from_index_file(tmp_path / "i.bin") == dg.report_from_indices(idx, 8)


def test_report_csv_and_write(tmp_path):
    rep = dg.report_from_indices(np.array([[0, 1], [1, 1]]), 2)
    assert rep["per_stage"][0]["utilization"] == 1.0
    assert rep["per_stage"][1]["perplexity"] == 1.0
    dg.write_report(rep, tmp_path / "s.json", tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "stage,utilization,perplexity,total,bitrate_efficiency"
    assert len(lines) == 3


def test_embedding_dump(tmp_path):
    rng = Rng(3)
    s = RvqStack([Codebook(rng.normal((4, 3))), Codebook(rng.normal((4, 3)))])
    dg.export_embedding_dump(s, np.zeros((0, 3)), tmp_path / "empty.json")
    back = dg.load_embedding_dump(tmp_path / "empty.json")
    assert len(back) == 2
    assert back[0]["codebook"].tobytes() == s.codebooks[0].vectors.tobytes()
    assert back[1]["features"].size == 0

    z = rng.normal((10, 3))
    dg.export_embedding_dump(s, z, tmp_path / "full.json")
    back = dg.load_embedding_dump(tmp_path / "full.json")
    res = rvq_quantize(z, s)
    assert back[1]["features"].tobytes() == res.stage_inputs[1].tobytes()

    (tmp_path / "plain_file").write_text("")
    with pytest.raises(ErvqIOError, match="plain_file"):
        dg.export_embedding_dump(s, z, tmp_path / "plain_file" / "x.json")
