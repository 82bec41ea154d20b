import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Iterable

from src import __version__

RED = "31"
GREEN = "32"
YELLOW = "33"
BLUE = "34"
BOLD = "1"

_LEVEL_COLORS = {
    logging.WARNING: YELLOW,
    logging.ERROR: RED,
    logging.CRITICAL: RED,
}


def colored_terminal_text(text: str, color_code: str) -> str:
    return f"\033[{color_code}m{text}\033[0m"


class ColoredFormatter(logging.Formatter):

    def __init__(self, use_color: bool = True):
        super().__init__("%(levelname)s %(name)s: %(message)s")
        self.use_color = use_color

    def format(self, record: logging.LogRecord) -> str:
        text = super().format(record)
        color = _LEVEL_COLORS.get(record.levelno)
        if self.use_color and color:
            return colored_terminal_text(text, color)
        return text


_configured = False


def configure_logging(level: int = logging.INFO) -> None:
    global _configured
    root = logging.getLogger("ceqa")
    if not _configured:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(ColoredFormatter(use_color=sys.stderr.isatty()))
        root.addHandler(handler)
        root.propagate = False
        _configured = True
    root.setLevel(level)


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(f"ceqa.{name}")


def file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _jsonable(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if value is None or isinstance(value, (str, int, float, bool)):
        return value
    return str(value)


def write_manifest(out_dir: Path, subcommand: str, config: Dict[str, Any],
                   seeds: Iterable[int], inputs: Iterable[Path] = ()) -> Path:
    """Write the RunManifest of one pipeline stage.

    Written before any artifact of the stage. It holds no timestamps, so a rerun
    with the same flags and inputs produces an identical file.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": subcommand,
        "config": _jsonable(dict(sorted(config.items()))),
        "seeds": list(seeds),
        "inputs": {str(p): file_digest(p) for p in sorted(Path(p) for p in inputs)},
        "tool_version": __version__,
    }
    path = out_dir / f"manifest.{subcommand}.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, ensure_ascii=False)
        f.write("\n")
    return path


def read_json_file(file_path: Path) -> Dict[str, Any]:
    with open(file_path, "r", encoding="utf-8") as f:
        return json.load(f)
