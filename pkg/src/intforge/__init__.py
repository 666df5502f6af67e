"""intforge: INT telemetry with data-plane event pre-filtering.

Submodules: ``int_wire`` (codec), ``dataplane`` (switch roles), ``detection``
(filter algorithms), ``controlplane`` (rules and config), ``traffic``
(burst-model traces), ``collector`` (report ingest) and ``bench`` (sweeps).
"""

__version__ = "0.1.0"
