"""Deterministic JSON and CSV report writers with provenance."""
import hashlib
import json
from pathlib import Path

import numpy as np

from .exceptions import MissingArtifactError

FLOAT_FORMAT = '%.17g'


def _plain(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f'{type(value).__name__} is not JSON serializable')


def canonical_json(data):
    return json.dumps(data, sort_keys=True, separators=(',', ':'),
                      default=_plain)


def config_hash(config_dict):
    """SHA-256 of the canonical config, ignoring where outputs go."""
    payload = {k: v for k, v in config_dict.items() if k != 'output_dir'}
    return hashlib.sha256(canonical_json(payload).encode('utf-8')).hexdigest()


def provenance(config):
    return {'config_hash': config.digest(), 'seed': config.seed}


def write_json(data, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(data, sort_keys=True, indent=2, default=_plain)
    path.write_text(text + '\n', encoding='utf-8')
    return path


def write_report(data, path, config):
    return write_json({**data, 'provenance': provenance(config)}, path)


def read_json(path, producer):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, producer)
    return json.loads(path.read_text(encoding='utf-8'))


def write_frame(frame, path, index=False):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=index, float_format=FLOAT_FORMAT)
    return path
