from pathlib import Path
from typing import Dict, Optional, Tuple

from src.errors import ConfigError, KGFormatError


def normalize_text(text: str) -> str:
    return " ".join(text.split())


def parse_kg_line(line: str, line_no: int) -> Optional[Tuple[str, str, str]]:
    """Split one KG line into (head, relation, tail); None for blank and comment lines."""
    stripped = line.rstrip("\r\n")
    if not stripped.strip() or stripped.lstrip().startswith("#"):
        return None
    fields = stripped.split("\t")
    if len(fields) != 3:
        raise KGFormatError(f"expected 3 tab-separated fields, found {len(fields)}", line_no)
    head, relation, tail = (normalize_text(field) for field in fields)
    if not head or not relation or not tail:
        raise KGFormatError("empty field", line_no)
    return head, relation, tail


def read_key_value_file(path: Path) -> Dict[str, str]:
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values
