"""Run configuration, CSV files and the JSON result envelope.

Config files are flat ``section.key = value`` lines; values are Python
literals (numbers, ``True``/``False``, ``None``, quoted strings, lists).
``#`` starts a comment. Unknown keys and duplicate keys are errors.
"""

import ast
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import __version__
from ._validation import ValidationError
from .model import CESIUM, KHZ, ModelParams, coupling_from_gradient

# key -> (default, kind); kinds: float, int, bool, str, floats (list), and
# "?"-suffixed kinds accept None.
SCHEMA = {
    "model.F": (4.0, "float"),
    "model.n_max": (5, "int"),
    "trap.omega_x_khz": (149.0, "float"),
    "trap.omega_y_khz": (93.0, "float"),
    "trap.omega_z_khz": (243.0, "float"),
    "coupling.g_x_khz": (18.0, "float"),
    "coupling.g_y_khz": (17.5, "float"),
    "coupling.b_y_gauss_per_m": (None, "float?"),
    "zeeman.delta_khz": (300.0, "float"),
    "zeeman.b0_gauss": (None, "float?"),
    "zeeman.offset_khz": (0.0, "float"),
    "thermal.mean_n_x": (0.5, "float"),
    "thermal.mean_n_y": (0.5, "float"),
    "thermal.mean_n_z": (0.5, "float"),
    "emission.eta_x": (0.1, "float"),
    "emission.eta_y": (0.15, "float"),
    "emission.eta_z": (0.0, "float"),
    "spectrum.f_min_khz": (-400.0, "float"),
    "spectrum.f_max_khz": (400.0, "float"),
    "spectrum.step_khz": (0.5, "float"),
    "spectrum.linewidth_khz": (2.0, "float"),
    "spectrum.include_carrier": (True, "bool"),
    "scan.delta_list_khz": (None, "floats?"),
    "scan.delta_start_khz": (0.0, "float"),
    "scan.delta_stop_khz": (330.0, "float"),
    "scan.delta_step_khz": (5.0, "float"),
    "noise.sigma": (0.0, "float"),
    "noise.seed": (0, "int"),
    "peaks.min_height_fraction": (0.02, "float"),
    "peaks.min_separation_khz": (3.0, "float"),
    "fit.trap_window_min_khz": (250.0, "float"),
    "fit.trap_window_max_khz": (330.0, "float"),
    "fit.zeeman_window_min_khz": (270.0, "float"),
    "fit.zeeman": (True, "bool"),
    "fit.refine": (True, "bool"),
    "fit.crossing_margin_khz": (40.0, "float"),
    "compare.gate_khz": (10.0, "float"),
    "compare.threshold_khz": (2.0, "float"),
    "tuneout.slope_khz_per_uw": (-0.120, "float"),
    "tuneout.intercept_khz": (35.0, "float"),
    "tuneout.noise_khz": (0.3, "float"),
    "tuneout.power_start_uw": (0.0, "float"),
    "tuneout.power_stop_uw": (100.0, "float"),
    "tuneout.power_step_uw": (5.0, "float"),
    "tuneout.exclude_high_power": (True, "bool"),
    "tuneout.max_power_uw": (100.0, "float"),
    "output.dir": (".", "str"),
    "runtime.threads": (1, "int"),
}

# Sections that do not change any numerical result.
UNHASHED_SECTIONS = ("output", "runtime")


def _coerce(key, value, kind):
    optional = kind.endswith("?")
    base = kind.rstrip("?")
    if value is None:
        if optional:
            return None
        raise ValidationError(f"{key} may not be None")
    if base == "bool":
        if not isinstance(value, bool):
            raise ValidationError(f"{key} must be True or False, got {value!r}")
        return value
    if base == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"{key} must be an integer, got {value!r}")
        return int(value)
    if base == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{key} must be a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ValidationError(f"{key} must be finite")
        return value
    if base == "str":
        if not isinstance(value, str):
            raise ValidationError(f"{key} must be a quoted string, got {value!r}")
        return value
    if base == "floats":
        if not isinstance(value, (list, tuple)):
            raise ValidationError(f"{key} must be a list of numbers")
        return tuple(_coerce(key, v, "float") for v in value)
    raise AssertionError(kind)


def _parse_value(key, text):
    t = text.strip()
    if t in ("true", "false"):
        return t == "true"
    if t in ("none", "null"):
        return None
    try:
        return ast.literal_eval(t)
    except (ValueError, SyntaxError) as exc:
        raise ValidationError(f"{key}: cannot parse value {text.strip()!r}") from exc


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; ``values`` maps every schema key to its value."""

    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def default(cls):
        return cls.from_mapping({})

    @classmethod
    def from_mapping(cls, mapping):
        unknown = sorted(set(mapping) - set(SCHEMA))
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        values = {}
        for key, (default, kind) in SCHEMA.items():
            values[key] = _coerce(key, mapping[key], kind) if key in mapping else default
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def parse(cls, text):
        mapping = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = _strip_comment(raw).strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"line {lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            key = key.strip()
            if key in mapping:
                raise ValidationError(f"line {lineno}: duplicate key {key}")
            if key not in SCHEMA:
                raise ValidationError(f"line {lineno}: unknown config key {key}")
            mapping[key] = _parse_value(key, value)
        return cls.from_mapping(mapping)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def replace(self, **updates):
        """Copy with dotted keys given as ``section__key=value``."""
        mapping = dict(self.values)
        for k, v in updates.items():
            mapping[k.replace("__", ".")] = v
        return RunConfig.from_mapping(mapping)

    def validate(self):
        v = self.values
        self.model_params()
        if v["spectrum.f_max_khz"] <= v["spectrum.f_min_khz"]:
            raise ValidationError("spectrum.f_max_khz must exceed spectrum.f_min_khz")
        for key in ("spectrum.step_khz", "spectrum.linewidth_khz", "scan.delta_step_khz",
                    "peaks.min_separation_khz", "compare.gate_khz", "tuneout.power_step_uw"):
            if v[key] <= 0:
                raise ValidationError(f"{key} must be > 0")
        for key in ("thermal.mean_n_x", "thermal.mean_n_y", "thermal.mean_n_z", "emission.eta_x",
                    "emission.eta_y", "emission.eta_z", "noise.sigma", "tuneout.noise_khz"):
            if v[key] < 0:
                raise ValidationError(f"{key} must be >= 0")
        if not 0 < v["peaks.min_height_fraction"] <= 1:
            raise ValidationError("peaks.min_height_fraction must lie in (0, 1]")
        if v["noise.seed"] < 0 or v["noise.seed"] >= 2**64:
            raise ValidationError("noise.seed must be an unsigned 64-bit integer")
        if v["runtime.threads"] < 1:
            raise ValidationError("runtime.threads must be >= 1")
        if v["scan.delta_list_khz"] is not None and len(v["scan.delta_list_khz"]) == 0:
            raise ValidationError("scan.delta_list_khz is empty")

    # ---- derived quantities -------------------------------------------

    def delta(self):
        """Zeeman splitting (rad/s) for single-spectrum runs."""
        b0 = self["zeeman.b0_gauss"]
        nominal = CESIUM.zeeman_rate * b0 if b0 is not None else self["zeeman.delta_khz"] * KHZ
        return nominal + self["zeeman.offset_khz"] * KHZ

    def model_params(self, Delta=0.0):
        v = self.values
        g_y = v["coupling.g_y_khz"] * KHZ
        omega_y = v["trap.omega_y_khz"] * KHZ
        if v["coupling.b_y_gauss_per_m"] is not None:
            g_y = coupling_from_gradient(v["coupling.b_y_gauss_per_m"], omega_y, CESIUM, F=v["model.F"])
        return ModelParams(
            F=v["model.F"],
            omega_x=v["trap.omega_x_khz"] * KHZ,
            omega_y=omega_y,
            omega_z=v["trap.omega_z_khz"] * KHZ,
            Delta=max(Delta, 0.0),
            g_x=v["coupling.g_x_khz"] * KHZ,
            g_y=g_y,
            n_max=v["model.n_max"],
        )

    def scan_deltas_khz(self):
        """Nominal scan axis in kHz (ascending)."""
        if self["scan.delta_list_khz"] is not None:
            return np.sort(np.asarray(self["scan.delta_list_khz"], dtype=float))
        start, stop, step = self["scan.delta_start_khz"], self["scan.delta_stop_khz"], self["scan.delta_step_khz"]
        if stop < start:
            raise ValidationError("scan.delta_stop_khz must be >= scan.delta_start_khz")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return start + step * np.arange(n)

    def hash(self):
        """SHA-256 of the canonical form of every result-affecting value."""
        items = {k: v for k, v in self.values.items() if k.split(".", 1)[0] not in UNHASHED_SECTIONS}
        canon = json.dumps(
            {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(items.items())},
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def to_text(self):
        lines = []
        for key in SCHEMA:
            val = self.values[key]
            lines.append(f"{key} = {list(val) if isinstance(val, tuple) else val!r}")
        return "\n".join(lines) + "\n"


def _strip_comment(line):
    out, quote = [], None
    for ch in line:
        if quote:
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "#":
            break
        out.append(ch)
    return "".join(out)


# ---------------------------------------------------------------------------
# CSV

SPECTRUM_HEADER = ("freq_khz", "psd")
SCAN_HEADER = ("delta_khz", "freq_khz", "psd")
PEAKS_HEADER = ("delta_khz", "center_khz", "center_err_khz", "height", "width_khz")
TUNEOUT_HEADER = ("power_uw", "omega_khz", "omega_err_khz")


def format_float(x):
    """Nine significant digits; ``nan``/``inf`` spelled out."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    s = format(x, ".9g")
    return "0" if s == "-0" else s


def write_csv(path, header, columns):
    columns = [np.asarray(c, dtype=float).ravel() for c in columns]
    n = {c.size for c in columns}
    if len(n) > 1:
        raise ValidationError("CSV columns differ in length")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*columns):
            fh.write(",".join(format_float(v) for v in row) + "\n")


def read_csv(path, header):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
        if tuple(first.split(",")) != tuple(header):
            raise ValidationError(f"{path}: expected header {','.join(header)}, found {first!r}")
        rows = [line.strip() for line in fh if line.strip()]
    try:
        data = np.array([[float(v) for v in r.split(",")] for r in rows], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric value") from exc
    if data.size == 0:
        return [np.empty(0) for _ in header]
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValidationError(f"{path}: every row needs {len(header)} fields")
    return [data[:, j] for j in range(len(header))]


def scan_from_columns(delta_khz, freq_khz, psd, linewidth_khz, include_carrier=True, b0=None):
    """Rebuild a :class:`DeltaScan` from long-format columns."""
    from .analysis.scan import DeltaScan

    deltas = np.unique(delta_khz)
    if deltas.size == 0:
        raise ValidationError("scan file holds no data")
    grid = freq_khz[delta_khz == deltas[0]]
    rows = []
    for d in deltas:
        sel = delta_khz == d
        if not np.array_equal(freq_khz[sel], grid):
            raise ValidationError(f"spectrum at delta {d} kHz is not on the shared grid")
        rows.append(psd[sel])
    return DeltaScan(
        deltas=deltas * KHZ,
        freq_khz=grid,
        psd=np.vstack(rows),
        linewidth_khz=float(linewidth_khz),
        b0=None if b0 is None else b0(deltas * KHZ),
        metadata={"include_carrier": bool(include_carrier)},
    )


# ---------------------------------------------------------------------------
# JSON envelope

ENVELOPE_KEYS = ("tool_version", "config_hash", "seed", "timestamps", "payload")


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        return format(x, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        parts = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(parts) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        parts = [f"{pad}{_encode(v, indent, level + 1)}" for v in seq]
        return "[\n" + ",\n".join(parts) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_envelope(envelope):
    return _encode({k: envelope[k] for k in ENVELOPE_KEYS}, 2, 0) + "\n"


def make_envelope(config, seed, payload, created=None):
    """Result envelope; ``created`` stays null unless given, so reruns are
    byte-identical."""
    return {
        "tool_version": __version__,
        "config_hash": config.hash(),
        "seed": int(seed),
        "timestamps": {"created_utc": created},
        "payload": payload,
    }


def write_envelope(path, envelope):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_envelope(envelope))


def read_envelope(path):
    with open(path, encoding="utf-8") as fh:
        env = json.load(fh)
    if tuple(env) != ENVELOPE_KEYS:
        raise ValidationError(f"{path}: not a result envelope")
    return env
