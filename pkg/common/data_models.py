import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple, Type, TypeVar

R = TypeVar("R", bound="JsonRecord")


def _encode_float(value: Any) -> Any:
    # JSON has no inf/nan; keep them as strings so from_json can restore them
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {k: _encode_float(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_encode_float(v) for v in value]
    return value


def _decode_float(value: Any) -> Any:
    if value in ("inf", "-inf", "nan"):
        return float(value)
    return value


class JsonRecord:
    """
    Mixin for the result dataclasses passed from the numerical modules to the
    orchestrator and written to reports.
    """

    def to_json(self) -> str:
        try:
            return json.dumps(_encode_float(asdict(self)), ensure_ascii=False)
        except TypeError as e:
            raise ValueError(f"Could not serialize {type(self).__name__} to JSON: {e}") from e

    @classmethod
    def from_json(cls: Type[R], json_str: str) -> R:
        try:
            data_dict = json.loads(json_str)
            known = {f.name for f in fields(cls)}
            args = {k: _decode_float(v) for k, v in data_dict.items() if k in known}
            return cls(**args)
        except (json.JSONDecodeError, TypeError, KeyError) as e:
            raise ValueError(f"Could not decode {cls.__name__} from JSON: {e}") from e


@dataclass
class RowTask:
    """
    One unit of work for the orchestrator's worker pool: a command handler
    name, the row key that fixes output order and random streams, and the
    handler parameters.
    """
    command: str = ""
    key: Tuple[int, ...] = ()
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass
class ResultRow(JsonRecord):
    """One CSV row, tagged with the key of the task that produced it."""
    key: List[int] = field(default_factory=list)
    values: Dict[str, Any] = field(default_factory=dict)
    runtime_ms: float = 0.0


@dataclass
class RunHeader(JsonRecord):
    """Metadata written as the first (comment) row of every CSV report."""
    schema_version: str = "1"
    command: str = ""
    config_hash: str = ""
    seed: Optional[int] = None
