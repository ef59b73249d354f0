import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spinmotion import ValidationError
from spinmotion.io import (
    ENVELOPE_KEYS,
    SCAN_HEADER,
    SCHEMA,
    SPECTRUM_HEADER,
    RunConfig,
    dumps_envelope,
    format_float,
    make_envelope,
    read_csv,
    read_envelope,
    scan_from_columns,
    write_csv,
    write_envelope,
)
from spinmotion.model import KHZ

TEXT = """
# trap
trap.omega_y_khz = 93
trap.omega_x_khz = 149.0
coupling.g_y_khz = 17.5   # coupling
scan.delta_list_khz = [60, 120, 300]
output.dir = "runs/a#1"
"""


def test_defaults_are_reference_values():
    cfg = RunConfig.default()
    assert cfg["trap.omega_y_khz"] == 93.0 and cfg["trap.omega_x_khz"] == 149.0
    assert cfg["coupling.g_y_khz"] == 17.5 and cfg["coupling.g_x_khz"] == 18.0
    assert cfg["thermal.mean_n_y"] == 0.5 and cfg["emission.eta_y"] == 0.15
    assert cfg["emission.eta_x"] == 0.1


def test_parse_values_and_comments():
    cfg = RunConfig.parse(TEXT)
    assert cfg["scan.delta_list_khz"] == (60.0, 120.0, 300.0)
    assert cfg["output.dir"] == "runs/a#1"
    assert cfg["coupling.g_y_khz"] == 17.5
    np.testing.assert_array_equal(cfg.scan_deltas_khz(), [60.0, 120.0, 300.0])


@pytest.mark.parametrize(
    "text",
    [
        "trap.omega_q_khz = 1",
        "trap.omega_y_khz = 93\ntrap.omega_y_khz = 94",
        "trap.omega_y_khz 93",
        "trap.omega_y_khz = [",
        "model.n_max = 5.5",
        "spectrum.include_carrier = 1",
        "trap.omega_y_khz = -1",
        "scan.delta_list_khz = []",
        "spectrum.step_khz = 0",
        "noise.seed = -1",
        "peaks.min_height_fraction = 2",
    ],
)
def test_invalid_configs_rejected(text):
    with pytest.raises(ValidationError):
        RunConfig.parse(text)


def test_unknown_mapping_key_rejected():
    with pytest.raises(ValidationError):
        RunConfig.from_mapping({"trap.bogus": 1.0})


def test_hash_ignores_order_and_output_sections():
    lines = [ln for ln in TEXT.strip().splitlines() if ln and not ln.startswith("#")]
    a = RunConfig.parse("\n".join(lines))
    b = RunConfig.parse("\n".join(reversed(lines)))
    assert a.hash() == b.hash()
    assert a.replace(output__dir="elsewhere").hash() == a.hash()
    assert a.replace(runtime__threads=4).hash() == a.hash()
    assert a.replace(trap__omega_y_khz=94.0).hash() != a.hash()
    assert a.replace(noise__seed=1).hash() != a.hash()


@given(st.sampled_from(sorted(k for k, (_, kind) in SCHEMA.items() if kind == "float")),
       st.floats(0.5, 50.0, allow_nan=False))
def test_hash_tracks_every_numeric_field(key, bump):
    cfg = RunConfig.default()
    try:
        changed = cfg.replace(**{key.replace(".", "__"): cfg[key] + bump})
    except ValidationError:
        return
    assert changed.hash() != cfg.hash()


def test_to_text_round_trip():
    cfg = RunConfig.parse(TEXT)
    again = RunConfig.parse(cfg.to_text())
    assert again.values == cfg.values and again.hash() == cfg.hash()


def test_gradient_overrides_coupling():
    cfg = RunConfig.parse("coupling.b_y_gauss_per_m = 1.9e6\ntrap.omega_y_khz = 95")
    assert cfg.model_params().g_y / KHZ == pytest.approx(18.810279, abs=1e-5)


def test_format_float():
    assert format_float(1 / 3) == "0.333333333"
    assert format_float(-0.0) == "0"
    assert format_float(float("nan")) == "nan"
    assert format_float(float("-inf")) == "-inf"
    assert format_float(123456789012.0) == "1.23456789e+11"


def test_csv_header_and_line_endings(tmp_path):
    path = tmp_path / "s.csv"
    write_csv(path, SPECTRUM_HEADER, [[0.0, 0.5], [1.0, 2.0]])
    raw = path.read_bytes()
    assert raw == b"freq_khz,psd\n0,1\n0.5,2\n"
    f, p = read_csv(path, SPECTRUM_HEADER)
    np.testing.assert_array_equal(f, [0.0, 0.5])
    with pytest.raises(ValidationError):
        read_csv(path, SCAN_HEADER)
    with pytest.raises(ValidationError):
        write_csv(path, SPECTRUM_HEADER, [[0.0], [1.0, 2.0]])


def test_csv_rejects_garbage(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("freq_khz,psd\n1,x\n")
    with pytest.raises(ValidationError):
        read_csv(path, SPECTRUM_HEADER)
    path.write_text("freq_khz,psd\n1,2,3\n")
    with pytest.raises(ValidationError):
        read_csv(path, SPECTRUM_HEADER)


def test_scan_from_columns():
    d = np.repeat([10.0, 20.0], 3)
    f = np.tile([0.0, 1.0, 2.0], 2)
    scan = scan_from_columns(d, f, np.arange(6.0), 2.0, include_carrier=False)
    np.testing.assert_array_equal(scan.psd, [[0, 1, 2], [3, 4, 5]])
    assert scan.metadata["include_carrier"] is False
    with pytest.raises(ValidationError):
        scan_from_columns(d, np.r_[f[:3], 0.0, 1.0, 2.5], np.arange(6.0), 2.0)


def test_envelope_byte_round_trip(tmp_path):
    cfg = RunConfig.default()
    payload = {"b": [1.0, 0.1, float("nan")], "a": {"z": 1, "y": True}, "s": "µ"}
    env = make_envelope(cfg, 7, payload)
    path = tmp_path / "e.json"
    write_envelope(path, env)
    first = path.read_bytes()
    back = read_envelope(path)
    assert tuple(back) == ENVELOPE_KEYS
    assert back["payload"]["b"][1] == 0.1 and back["payload"]["b"][2] is None
    assert list(back["payload"]) == ["b", "a", "s"]
    write_envelope(path, back)
    assert path.read_bytes() == first
    assert back["timestamps"] == {"created_utc": None}
    assert back["config_hash"] == cfg.hash()


def test_envelope_rejects_other_json(tmp_path):
    path = tmp_path / "x.json"
    path.write_text(json.dumps({"payload": 1}))
    with pytest.raises(ValidationError):
        read_envelope(path)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_envelope_floats_round_trip(x):
    env = make_envelope(RunConfig.default(), 0, {"x": x})
    assert json.loads(dumps_envelope(env))["payload"]["x"] == x
