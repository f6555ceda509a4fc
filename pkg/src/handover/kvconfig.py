"""Plain-text ``key = value`` configuration files.

Lines starting with ``#`` are comments. ``include = other.cfg`` pulls in
another file (resolved relative to the including file, or against the
shipped presets when only a bare name is given); keys that appear later
override earlier ones, so an including file can override its base.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path


class ConfigError(ValueError):
    pass


def _resolve(name: str, parent: Path | None) -> Path:
    if parent is not None:
        cand = parent / name
        if cand.exists():
            return cand
    cand = Path(name)
    if cand.exists():
        return cand
    preset = resources.files("handover") / "presets" / name
    if preset.is_file():
        return Path(str(preset))
    raise ConfigError(f"config file not found: {name}")


def parse_text(text: str, source: str = "<string>", parent: Path | None = None, _seen=None) -> dict[str, str]:
    seen = set() if _seen is None else _seen
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key == "include":
            path = _resolve(value, parent).resolve()
            if path in seen:
                raise ConfigError(f"{source}:{lineno}: include cycle through {path}")
            seen.add(path)
            out.update(parse_text(path.read_text(), str(path), path.parent, seen))
            seen.discard(path)
        else:
            out[key] = value
    return out


def read_config(path: str | Path) -> dict[str, str]:
    path = _resolve(str(path), None).resolve()
    return parse_text(path.read_text(), str(path), path.parent, {path})


def parse_floats(value: str, n: int | None = None) -> list[float]:
    try:
        vals = [float(v) for v in value.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected numbers, got {value!r}") from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} numbers, got {value!r}")
    return vals


def parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in {"1", "true", "yes", "on"}:
        return True
    if v in {"0", "false", "no", "off"}:
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def parse_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]
