"""Path discovery between a transmitter and a receiver."""
from .paths import (PathKind, Interaction, PropagationPath, TraceResult, REFLECT, SCATTER,
                    format_path, write_paths, read_path_lines)
from .trace import (TraceConfig, trace_paths, launch_directions, direction_uniforms,
                    sample_scatter_direction)

__all__ = [
    "PathKind", "Interaction", "PropagationPath", "TraceResult", "REFLECT", "SCATTER",
    "format_path", "write_paths", "read_path_lines", "TraceConfig", "trace_paths",
    "launch_directions", "direction_uniforms", "sample_scatter_direction",
]
