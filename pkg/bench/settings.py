"""
Plain-text experiment settings.

One ``key = value`` per line, ``#`` starts a comment, dotted keys name a
section (``grid.count = 201``). ``--set key=value`` overrides are applied
after the file, in order, so the last one wins.
"""
import hashlib
import json
import logging
import os
from typing import Dict, Iterable, Mapping, Optional

from marshmallow import ValidationError

from .schemas import ExperimentConfig, ExperimentConfigSchema

logger = logging.getLogger(__name__)


def _split_assignment(line: str, source: str, lineno: Optional[int] = None):
    if '=' not in line:
        where = f"{source}:{lineno}" if lineno else source
        raise ValidationError({line.strip(): [f"Expected 'key = value' ({where})."]})
    key, value = line.split('=', 1)
    key = key.strip()
    if not key:
        raise ValidationError({'': [f"Empty key in {source}."]})
    return key, value.strip()


def parse_settings_text(text: str, source: str = "<settings>") -> Dict[str, str]:
    """Flat ``dotted.key -> raw string`` mapping from settings text."""
    flat: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        key, value = _split_assignment(line, source, lineno)
        flat[key] = value
    return flat


def read_settings_file(path: str) -> Dict[str, str]:
    if not os.path.exists(path):
        raise ValidationError({'config': [f"Config file not found: {path}"]})
    with open(path, 'r', encoding='utf-8') as f:
        return parse_settings_text(f.read(), source=path)


def apply_overrides(flat: Dict[str, str], overrides: Iterable[str]) -> Dict[str, str]:
    merged = dict(flat)
    for item in overrides or ():
        key, value = _split_assignment(item, "--set")
        merged[key] = value
    return merged


def nest(flat: Mapping[str, object]) -> Dict[str, object]:
    """``{'grid.count': '201'} -> {'grid': {'count': '201'}}``"""
    nested: Dict[str, object] = {}
    for key, value in flat.items():
        parts = key.split('.')
        node = nested
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ValidationError({key: [f"'{part}' is both a value and a section."]})
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ValidationError({key: [f"'{parts[-1]}' is a section, not a value."]})
        node[parts[-1]] = value
    return nested


def load_experiment_config(path: Optional[str] = None, overrides: Iterable[str] = (),
                           base: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """
    Resolve defaults, the settings file and overrides into an ExperimentConfig.

    Raises:
        marshmallow.ValidationError: unknown keys or invalid values.
    """
    flat = dict(base or {})
    if path:
        flat.update(read_settings_file(path))
    flat = apply_overrides(flat, overrides)
    config = ExperimentConfigSchema().load(nest(flat))
    logger.debug(f"Resolved config for {config.experiment}: {dump_config(config)}")
    return config


def dump_config(config: ExperimentConfig) -> dict:
    return ExperimentConfigSchema().dump(config)


def config_hash(config: ExperimentConfig) -> str:
    """Short content hash of the resolved config, used in report provenance."""
    payload = json.dumps(dump_config(config), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()[:16]
