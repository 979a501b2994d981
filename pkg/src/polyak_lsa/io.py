"""JSON/CSV serialization and the problem-spec schema.

Floats are written with 17 significant digits so every double round-trips
exactly; non-finite values become the strings ``"NaN"``, ``"Infinity"`` and
``"-Infinity"``, and complex numbers become ``{"re": ..., "im": ...}``.
Output is byte-stable: keys keep insertion order and no timestamps are
embedded.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import enum
import json
import math
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .errors import SchemaError

__all__ = [
    "SCHEMA_VERSION",
    "SPEC_SCHEMA",
    "to_jsonable",
    "dumps",
    "write_json",
    "read_json",
    "as_array",
    "load_spec",
    "validate_spec",
    "apply_overrides",
    "write_rows_csv",
    "trajectory_csv",
]

SCHEMA_VERSION = 1


# ----------------------------------------------------------------- encoding


def _float_text(x: float) -> str:
    if math.isnan(x):
        return '"NaN"'
    if math.isinf(x):
        return '"Infinity"' if x > 0 else '"-Infinity"'
    if x == int(x) and abs(x) < 1e16:
        return repr(float(x))
    return format(x, ".17g")


def to_jsonable(obj: Any) -> Any:
    """Plain Python structure (dict/list/str/int/float/bool/None) for ``obj``."""
    if isinstance(obj, enum.Enum):
        return obj.value
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()] if obj.ndim else to_jsonable(obj.item())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.complexfloating, complex)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, Path):
        return str(obj)
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _emit(x, indent: int, level: int, out: list[str]) -> None:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(x, dict):
        if not x:
            out.append("{}")
            return
        out.append("{\n")
        for i, (k, v) in enumerate(x.items()):
            out.append(f"{pad}{json.dumps(k)}: ")
            _emit(v, indent, level + 1, out)
            out.append(",\n" if i < len(x) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(x, list):
        if not x:
            out.append("[]")
            return
        if all(not isinstance(v, (dict, list)) for v in x):
            out.append("[" + ", ".join(_scalar(v) for v in x) + "]")
            return
        out.append("[\n")
        for i, v in enumerate(x):
            out.append(pad)
            _emit(v, indent, level + 1, out)
            out.append(",\n" if i < len(x) - 1 else "\n")
        out.append(end + "]")
    else:
        out.append(_scalar(x))


def _scalar(v) -> str:
    if isinstance(v, bool) or v is None or isinstance(v, (int, str)):
        return json.dumps(v)
    if isinstance(v, float):
        return _float_text(v)
    raise TypeError(f"unexpected scalar {v!r}")


def dumps(obj: Any, indent: int = 2) -> str:
    out: list[str] = []
    _emit(to_jsonable(obj), indent, 0, out)
    return "".join(out) + "\n"


def write_json(path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def read_json(path) -> Any:
    return json.loads(Path(path).read_text())


_SPECIAL = {"NaN": math.nan, "Infinity": math.inf, "-Infinity": -math.inf}


def _decode(v):
    if isinstance(v, dict) and set(v) == {"re", "im"}:
        return complex(_decode(v["re"]), _decode(v["im"]))
    if isinstance(v, list):
        return [_decode(u) for u in v]
    if isinstance(v, str) and v in _SPECIAL:
        return _SPECIAL[v]
    return v


def as_array(v, dtype=float) -> np.ndarray:
    """Decode a serialized (possibly complex or non-finite) array."""
    data = _decode(v)
    arr = np.asarray(data)
    if np.iscomplexobj(arr):
        return arr.astype(complex)
    return arr.astype(dtype)


def write_rows_csv(path, header: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_csv_cell(x) for x in row])
    return path


def _csv_cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return _float_text(float(x)).strip('"')
    return str(x)


def trajectory_csv(path, traj) -> Path:
    """CSV with columns ``t, theta_1 .. theta_d`` (only the recorded iterates)."""
    if traj.iterates is None:
        times = np.array([traj.T_completed])
        rows = traj.final[None, :]
    else:
        times, rows = traj.iterate_times, traj.iterates
    d = rows.shape[1]
    header = ["t"] + [f"theta_{i + 1}" for i in range(d)]
    return write_rows_csv(path, header, ([int(t)] + list(r) for t, r in zip(times, rows)))


# ------------------------------------------------------------- spec schema

_num = {"type": ["number", "string"]}
_vec = {"type": "array", "items": _num, "minItems": 1}
_mat = {"type": "array", "items": _vec, "minItems": 1}
_pos_int = {"type": "integer", "minimum": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_ORACLE_PARAMS = {
    "deterministic": _obj({}),
    "gaussian": _obj({"a_std": _num, "b_std": _num, "b_cov": _mat}),
    "regression": _obj({"theta": _vec, "noise_std": _num, "x_cov": _mat}, ["theta"]),
    "counterexample": _obj({"d": {"type": "integer", "minimum": 2}}, ["d"]),
    "minimax": _obj({"payoff_P": _mat, "c_x": _vec, "c_y": _vec, "noise_std": _num},
                    ["payoff_P", "c_x", "c_y"]),
    "td_exact": _obj({"P": _mat, "r": _vec, "gamma": _num, "center_rewards": {"type": "boolean"}},
                     ["P", "r", "gamma"]),
    "td_linear": _obj({"P": _mat, "r": _vec, "gamma": _num, "features": _mat},
                      ["P", "r", "gamma", "features"]),
    "momentum": _obj({"alpha": _num, "eta": _num,
                      "base": {"$ref": "#/$defs/oracle"}}, ["alpha", "eta", "base"]),
}

_STUDY_PARAMS = {
    "clt": _obj({"directions": _mat, "ratio_tol": _num}),
    "critical_rate": _obj({"T_grid": {"type": "array", "items": _pos_int, "minItems": 2},
                           "eta_scale": _num}, ["T_grid"]),
    "counterexample": _obj({"etas": _vec, "T_max": _pos_int}),
    "momentum_spectrum": _obj({"base_eigs": _vec, "alpha": _num, "eta": _num},
                              ["base_eigs", "alpha", "eta"]),
    "momentum_mixing": _obj({"alpha": _num}, ["alpha"]),
    "td": _obj({"mode": {"enum": ["ExactDiscounted", "LinearFA", "AverageReward"]},
                "T_grid": {"type": "array", "items": _pos_int, "minItems": 1}},
               ["mode", "T_grid"]),
    "coverage": _obj({"c_grid": _vec}, ["c_grid"]),
}


def _tagged(kinds: dict) -> dict:
    return {
        "type": "object",
        "properties": {"kind": {"enum": sorted(kinds)}, "params": {"type": "object"}},
        "required": ["kind"],
        "additionalProperties": False,
        "allOf": [
            {"if": {"properties": {"kind": {"const": k}}},
             "then": {"properties": {"params": schema}}}
            for k, schema in kinds.items()
        ],
    }


SPEC_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$defs": {"oracle": _tagged(_ORACLE_PARAMS)},
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "problem": _obj({"matrix": _mat, "vector": _vec, "theta_star": _vec},
                        ["matrix", "vector"]),
        "oracle": {"$ref": "#/$defs/oracle"},
        "noise": _obj({"n_samples": {"type": "integer", "minimum": 1000}}),
        "run": _obj({
            "eta": _num,
            "T": _pos_int,
            "theta0": _vec,
            "schedule": {"enum": ["Constant", "CriticalSqrtT", "CubeRootT"]},
            "record": {"type": "string"},
            "overflow_guard": _num,
            "chunk": _pos_int,
        }, ["eta", "T"]),
        "replicates": _obj({"n": {"type": "integer", "minimum": 2}}, ["n"]),
        "inference": _obj({"delta": _num, "c": _num}),
        "study": _tagged(_STUDY_PARAMS),
    },
    "required": ["schema_version", "oracle"],
    "additionalProperties": False,
}

_VALIDATOR = jsonschema.Draft202012Validator(SPEC_SCHEMA)


def _dotted(path) -> str:
    parts = [str(p) for p in path]
    return ".".join(parts) if parts else "<root>"


def validate_spec(spec: dict) -> dict:
    """Check ``spec`` against the schema; raise :class:`SchemaError` at the deepest path."""
    errors = sorted(_VALIDATOR.iter_errors(spec), key=lambda e: -len(e.absolute_path))
    if errors:
        err = errors[0]
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            path = list(err.absolute_path) + extra[:1]
            raise SchemaError(_dotted(path), f"unknown key {extra[0]!r}" if extra else err.message)
        raise SchemaError(_dotted(err.absolute_path), err.message)
    kinds_need_problem = {"deterministic", "gaussian"}
    base = spec["oracle"]
    while base["kind"] == "momentum":
        base = base.get("params", {}).get("base", {})
    if base.get("kind") in kinds_need_problem and "problem" not in spec:
        raise SchemaError("problem", f"required by oracle kind {base['kind']!r}")
    if base.get("kind") not in kinds_need_problem and "problem" in spec:
        raise SchemaError("problem", f"not allowed with oracle kind {base['kind']!r}")
    return spec


def load_spec(path, overrides=()) -> dict:
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except FileNotFoundError:
        raise SchemaError("--spec", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError("<root>", f"invalid JSON: {exc}") from None
    return validate_spec(apply_overrides(spec, overrides))


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(spec: dict, overrides) -> dict:
    """Apply ``key.sub=value`` overrides; values parse as JSON, else as strings."""
    spec = copy.deepcopy(spec)
    for item in overrides:
        if "=" not in item:
            raise SchemaError(item, "override must look like key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = spec
        for i, p in enumerate(parts[:-1]):
            if isinstance(node, list):
                try:
                    node = node[int(p)]
                except (ValueError, IndexError):
                    raise SchemaError(".".join(parts[: i + 1]), "no such list index") from None
                continue
            if p not in node:
                node[p] = {}
            node = node[p]
            if not isinstance(node, (dict, list)):
                raise SchemaError(".".join(parts[: i + 1]), "cannot descend into a scalar")
        last = parts[-1]
        if isinstance(node, list):
            try:
                node[int(last)] = _parse_value(value)
            except (ValueError, IndexError):
                raise SchemaError(key, "no such list index") from None
        else:
            node[last] = _parse_value(value)
    return spec
