import struct

import numpy as np
import pytest

from dsic.config import RunConfig, load_config, parse_config, serialize_config
from dsic.errors import ConfigError, ConfigParseError, ShapeMismatch
from dsic.model import init_model, named_tensors
from dsic.nn import init_conv
from dsic.records import GATE_CSV_HEADER, GateRecord, gate_rows_csv, matrix_csv, matrix_pgm
from dsic.serialize import (
    conv_from_bytes,
    conv_to_bytes,
    load_snapshot,
    read_tensor,
    save_snapshot,
    tensor_from_bytes,
    tensor_to_bytes,
    tensor_to_csv,
    write_tensor,
)
from dsic.tensor import Tensor


class TestTensorBlob:
    def test_layout(self):
        t = Tensor(np.arange(6, dtype=float).reshape(1, 2, 1, 3))
        blob = tensor_to_bytes(t)
        assert struct.unpack_from("<4I", blob) == (1, 2, 1, 3)
        assert struct.unpack_from("<6d", blob, 16) == tuple(range(6))

    def test_round_trip(self, rng, tmp_path):
        t = Tensor(rng.normal(size=(2, 3, 4, 5)))
        write_tensor(tmp_path / "t.bin", t)
        assert np.array_equal(read_tensor(tmp_path / "t.bin").data, t.data)

    def test_truncated(self, rng):
        blob = tensor_to_bytes(Tensor(rng.normal(size=(1, 1, 2, 2))))
        with pytest.raises(ShapeMismatch):
            tensor_from_bytes(blob[:-1])

    def test_trailing_bytes(self, rng, tmp_path):
        (tmp_path / "t.bin").write_bytes(tensor_to_bytes(Tensor(np.zeros((1, 1, 1, 1)))) + b"\0")
        with pytest.raises(ShapeMismatch):
            read_tensor(tmp_path / "t.bin")

    def test_csv_rows(self):
        t = Tensor(np.arange(8, dtype=float).reshape(2, 1, 2, 2))
        assert tensor_to_csv(t) == "0.0,1.0,2.0,3.0\n4.0,5.0,6.0,7.0\n"


def test_conv_round_trip(rng):
    p = init_conv(rng, 3, 2, kernel=3, stride=2, padding=1)
    q, end = conv_from_bytes(conv_to_bytes(p))
    assert end == len(conv_to_bytes(p))
    assert (q.stride, q.padding) == (2, 1)
    assert np.array_equal(q.weight.data, p.weight.data)
    assert np.array_equal(q.bias.data, p.bias.data)


def test_snapshot_round_trip(tmp_path):
    cfg = RunConfig(connector="dsic_after_fpn", d=8, seed=4)
    params = init_model(cfg)
    save_snapshot(tmp_path / "s.npz", params, cfg)
    loaded, cfg2 = load_snapshot(tmp_path / "s.npz")
    assert cfg2 == cfg
    for (n1, a), (n2, b) in zip(named_tensors(params), named_tensors(loaded)):
        assert n1 == n2 and np.array_equal(a.data, b.data)


class TestConfig:
    def test_round_trip(self):
        cfg = RunConfig(connector="fc_fpn", channels=(4, 8, 8, 16), lr=0.003, isg=False, seeds=(7,))
        assert parse_config(serialize_config(cfg)) == cfg

    def test_comments_and_blank_lines(self):
        cfg = parse_config("# desk run\n\nsteps = 10  # short\nplacement = outer\n")
        assert cfg.steps == 10 and cfg.placement == "outer"

    @pytest.mark.parametrize("text", ["nonsense", "colour = red", "steps = many", "isg = perhaps"])
    def test_parse_errors(self, text):
        with pytest.raises(ConfigParseError):
            parse_config(text)

    @pytest.mark.parametrize(
        "changes",
        [
            {"connector": "bifpn"},
            {"placement": "outer", "csg_mode": "softmax"},
            {"sampling_stride": 3},
            {"image_size": 48},
            {"blocks": (1, 2, 5, 1)},
            {"gate_init": "random"},
            {"isg_mode": "relu"},
        ],
    )
    def test_semantic_errors(self, changes):
        with pytest.raises(ConfigError):
            RunConfig(**changes).validate()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigParseError):
            load_config(tmp_path / "absent.cfg")


class TestRecords:
    def test_rows(self):
        rec = GateRecord(9, {(2, 1): 0.5}, {2: 0.25}, np.eye(4))
        rows = rec.rows()
        assert rows[0] == (9, "isg_b", 2, 1, 0.5)
        assert rows[1] == (9, "isg_a", 2, 0, 0.25)
        assert (9, "csg_w", 3, 3, 1.0) in rows
        assert len(rows) == 2 + 16

    def test_csv_header(self):
        text = gate_rows_csv(GateRecord(1, {(3, 2): 0.1}).rows())
        assert text.splitlines()[0] == ",".join(GATE_CSV_HEADER)

    def test_pgm(self):
        mat = np.linspace(0, 1, 16).reshape(4, 4)
        blob = matrix_pgm(mat)
        assert blob[:11] == b"P5\n4 4\n255\n"
        assert len(blob) == 11 + 16
        assert blob[11] == 0 and blob[-1] == 255

    def test_matrix_csv(self):
        lines = matrix_csv(np.zeros((4, 4))).splitlines()
        assert len(lines) == 5
        assert lines[0].endswith("2,3,4,5")
