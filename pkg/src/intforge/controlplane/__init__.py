from .config import ConfigDocument, ConfigError, apply_document, load_config, parse_document
from .expression import ExpressionError, compile_expression, parse_expression
from .rules import (
    WILDCARD,
    Controller,
    FlowConfig,
    FlowMatch,
    ForwardingTable,
    RuleError,
    SwitchRole,
    SwitchTables,
)

__all__ = [
    "ConfigDocument",
    "ConfigError",
    "Controller",
    "ExpressionError",
    "FlowConfig",
    "FlowMatch",
    "ForwardingTable",
    "RuleError",
    "SwitchRole",
    "SwitchTables",
    "WILDCARD",
    "apply_document",
    "compile_expression",
    "load_config",
    "parse_document",
    "parse_expression",
]
