"""Declarative configuration documents.

A document is JSON with this shape (see ``configs/single_switch.json``)::

    {
      "path": [1, 2],                      # optional: switch order for replay
      "switches": [
        {
          "id": 2,
          "flows": [
            {"match": {"dst_ip": "10.0.0.2"},   # omitted fields are wildcards
             "priority": 10,
             "role": "sink",
             "mask": ["switch_id", "queue_occupancy"],   # or an integer
             "algorithm": {"kind": "per_flow", "metadata": "queue_occupancy",
                           "threshold": 100}}
          ],
          "registers": {"reg_n": 256, "flow_n": 65536,
                        "expressions": {"0": "hop_latency > 10 and queue_occupancy > 100"}},
          "forwarding": [{"prefix": "10.0.0.0/24", "port": 1}]
        }
      ],
      "workloads": {"web": {"queue_cap_us": 170}}   # optional preset overrides
    }

Loading is all-or-nothing: every section is checked and compiled before
the controller sees any of it.
"""

from __future__ import annotations

import ipaddress
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from ..detection import ALPHA_DEN, FLOW_N, REG_N, AlgorithmConfig, AlgorithmKind
from ..int_wire import Slot
from .expression import ExpressionError, compile_expression, lookup_slot
from .rules import (
    Controller,
    FlowConfig,
    FlowMatch,
    ForwardingTable,
    SwitchRole,
    SwitchTables,
    _sorted_rules,
    validate_flow,
)

_SLOT_NAMES = [s.attr for s in Slot]
_U32 = {"type": "integer", "minimum": 0, "maximum": 0xFFFFFFFF}

SCHEMA = {
    "type": "object",
    "required": ["switches"],
    "additionalProperties": False,
    "properties": {
        "path": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "switches": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "integer", "minimum": 0, "maximum": 0xFFFFFFFF},
                    "flows": {"type": "array", "items": {"$ref": "#/$defs/flow"}},
                    "registers": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "reg_n": {"type": "integer", "minimum": 1},
                            "flow_n": {"type": "integer", "minimum": 1},
                            "expressions": {
                                "type": "object",
                                "patternProperties": {r"^\d+$": {"type": "string"}},
                                "additionalProperties": False,
                            },
                        },
                    },
                    "forwarding": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["prefix", "port"],
                            "additionalProperties": False,
                            "properties": {
                                "prefix": {"type": "string"},
                                "port": {"type": "integer", "minimum": 0, "maximum": 0xFFFF},
                            },
                        },
                    },
                },
            },
        },
        "workloads": {"type": "object", "additionalProperties": {"type": "object"}},
    },
    "$defs": {
        "flow": {
            "type": "object",
            "required": ["role"],
            "additionalProperties": False,
            "properties": {
                "match": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "src_ip": {"type": ["string", "integer"]},
                        "dst_ip": {"type": ["string", "integer"]},
                        "src_port": {"type": "integer", "minimum": 0, "maximum": 0xFFFF},
                        "dst_port": {"type": "integer", "minimum": 0, "maximum": 0xFFFF},
                        "proto": {"type": "integer", "minimum": 0, "maximum": 0xFF},
                    },
                },
                "priority": {"type": "integer"},
                "role": {"enum": [r.value for r in SwitchRole]},
                "mask": {
                    "oneOf": [
                        {"type": "integer", "minimum": 0, "maximum": 255},
                        {"type": "array", "items": {"enum": _SLOT_NAMES}, "uniqueItems": True},
                    ]
                },
                "max_hops": {"type": "integer", "minimum": 1, "maximum": 255},
                "algorithm": {
                    "type": "object",
                    "required": ["kind"],
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": [k.value for k in AlgorithmKind]},
                        "metadata": {"type": "string"},
                        "threshold": _U32,
                        "alpha_num": {"type": "integer", "minimum": 0, "maximum": ALPHA_DEN},
                        "expr_index": {"type": "integer", "minimum": 0},
                        "always_update": {"type": "boolean"},
                    },
                },
            },
        }
    },
}


class ConfigError(ValueError):
    def __init__(self, diagnostics: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(diagnostics))
        self.diagnostics = diagnostics


@dataclass
class SwitchSection:
    switch_id: int
    tables: SwitchTables
    reg_n: int = REG_N
    flow_n: int = FLOW_N


@dataclass
class ConfigDocument:
    switches: list[SwitchSection]
    path: list[int] = field(default_factory=list)
    workloads: dict[str, dict] = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def section(self, switch_id: int) -> SwitchSection:
        for s in self.switches:
            if s.switch_id == switch_id:
                return s
        raise KeyError(switch_id)


def _ip(v) -> int:
    return v if isinstance(v, int) else int(ipaddress.IPv4Address(v))


def _mask(v) -> int:
    if isinstance(v, int):
        return v
    m = 0
    for name in v:
        m |= Slot[name.upper()].bit
    return m


def _algorithm(d: dict) -> AlgorithmConfig:
    return AlgorithmConfig(
        kind=AlgorithmKind(d["kind"]),
        metadata_type=lookup_slot(d.get("metadata", "queue_occupancy")),
        threshold=d.get("threshold", 0),
        alpha_num=d.get("alpha_num", ALPHA_DEN),
        expr_index=d.get("expr_index", 0),
        ewma_always_update=d.get("always_update", False),
    )


def parse_document(raw: dict, n_expressions: int = 16) -> ConfigDocument:
    """Validate and compile a document without applying it."""
    errors = [
        f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}"
        for e in sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(raw), key=lambda e: list(e.absolute_path))
    ]
    if errors:
        raise ConfigError(errors)

    sections = []
    seen = set()
    for si, sw in enumerate(raw["switches"]):
        where = f"switches/{si}"
        sid = sw["id"]
        if sid in seen:
            errors.append(f"{where}: duplicate switch id {sid}")
        seen.add(sid)

        regs = sw.get("registers", {})
        exprs = {}
        for idx, text in regs.get("expressions", {}).items():
            i = int(idx)
            if i >= n_expressions:
                errors.append(f"{where}/registers/expressions/{idx}: index outside 0..{n_expressions - 1}")
                continue
            try:
                exprs[i] = compile_expression(text)
            except ExpressionError as e:
                errors.append(f"{where}/registers/expressions/{idx}: {e}")

        rules = []
        keys = set()
        for fi, fl in enumerate(sw.get("flows", [])):
            fwhere = f"{where}/flows/{fi}"
            try:
                m = fl.get("match", {})
                match = FlowMatch(
                    src_ip=_ip(m["src_ip"]) if "src_ip" in m else None,
                    dst_ip=_ip(m["dst_ip"]) if "dst_ip" in m else None,
                    src_port=m.get("src_port"),
                    dst_port=m.get("dst_port"),
                    proto=m.get("proto"),
                )
                cfg = FlowConfig(
                    match=match,
                    role=SwitchRole(fl["role"]),
                    mask=_mask(fl.get("mask", 0)),
                    algorithm=_algorithm(fl.get("algorithm", {"kind": "noop"})),
                    priority=fl.get("priority", 0),
                    max_hops=fl.get("max_hops", 8),
                )
                validate_flow(cfg, n_expressions)
            except (ValueError, KeyError) as e:
                errors.append(f"{fwhere}: {e}")
                continue
            if cfg.algorithm.kind is AlgorithmKind.COMPLEX and cfg.algorithm.expr_index not in exprs:
                errors.append(f"{fwhere}: expr_index {cfg.algorithm.expr_index} has no expression register")
            if (match, cfg.priority) in keys:
                errors.append(f"{fwhere}: duplicate rule at priority {cfg.priority}")
            keys.add((match, cfg.priority))
            rules.append(cfg)

        fwd = ForwardingTable()
        for ri, ent in enumerate(sw.get("forwarding", [])):
            try:
                fwd.add(ent["prefix"], ent["port"])
            except ValueError as e:
                errors.append(f"{where}/forwarding/{ri}: {e}")

        tables = SwitchTables(
            switch_id=sid,
            rules=_sorted_rules(rules),
            forwarding=fwd,
            expressions=tuple(sorted(exprs.items())),
        )
        sections.append(SwitchSection(sid, tables, regs.get("reg_n", REG_N), regs.get("flow_n", FLOW_N)))

    path = raw.get("path", [])
    for sid in path:
        if sid not in seen:
            errors.append(f"path: switch {sid} is not defined")
    if errors:
        raise ConfigError(errors)
    return ConfigDocument(sections, list(path), dict(raw.get("workloads", {})), raw)


def apply_document(doc: ConfigDocument, controller: Controller) -> None:
    for s in doc.switches:
        controller.add_switch(s.switch_id)
    controller.replace_all({s.switch_id: s.tables for s in doc.switches})


def load_config(path: str | Path, controller: Controller | None = None) -> ConfigDocument:
    """Parse, validate and (if a controller is given) atomically apply a config file."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError([f"{path}: line {e.lineno}: {e.msg}"]) from None
    doc = parse_document(raw, controller.n_expressions if controller else 16)
    if controller is not None:
        apply_document(doc, controller)
    return doc
