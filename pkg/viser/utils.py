import hashlib
import json
import logging
import os
import random
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import torch

_OUTPUT_ROOT_ENV = 'VISER_OUTPUT_ROOT'

_RESERVED_LOG_KEYS = set(vars(logging.makeLogRecord({}))) | {'message', 'asctime'}


def seed_everything(seed):
    """Seed python, numpy and torch random streams.

    Arguments:
        seed {int} -- Seed.
    """
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def _default(obj):
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, 'value'):
        return obj.value
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def canonical_json(obj):
    """JSON with sorted keys and no whitespace, so equal objects give equal strings."""
    return json.dumps(obj, sort_keys=True, separators=(',', ':'), default=_default)


def fingerprint(obj):
    """Stable SHA-256 hex digest of a JSON-serializable object."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def file_checksum(path):
    """SHA-256 hex digest of the bytes of a file."""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def atomic_write_bytes(path, data):
    """Write `data` to `path` through a temporary file and a rename, so readers
    never see a partially written file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text):
    return atomic_write_bytes(path, text.encode('utf-8'))


def atomic_write_json(path, obj):
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_default) + '\n')


def write_jsonl(path, records):
    """Atomically write an iterable of dicts as line-delimited JSON."""
    lines = [json.dumps(rec, sort_keys=True, default=_default) for rec in records]
    return atomic_write_text(path, ''.join(line + '\n' for line in lines))


def read_jsonl(path):
    """Read line-delimited JSON, skipping blank lines.

    Returns:
        list -- List of `(line_number, record)` tuples. Lines that are not valid JSON
            raise `json.JSONDecodeError` with `lineno` relative to the line.
    """
    out = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            out.append((line_number, json.loads(line)))
    return out


def read_json(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def output_root(default):
    """Output root, with the `VISER_OUTPUT_ROOT` environment variable taking precedence."""
    override = os.environ.get(_OUTPUT_ROOT_ENV, None)
    if override:
        return Path(override)
    return Path(default)


class JsonLineFormatter(logging.Formatter):
    """Format log records as one JSON object per line.

    Structured fields passed through `extra=` are carried as top-level keys.
    """
    def format(self, record):
        event = {
            'ts': time.strftime('%Y-%m-%dT%H:%M:%S', time.gmtime(record.created)),
            'level': record.levelname.lower(),
            'logger': record.name,
            'event': record.getMessage(),
        }
        for key, value in vars(record).items():
            if key not in _RESERVED_LOG_KEYS and not key.startswith('_'):
                event[key] = value
        if record.exc_info:
            event['exc'] = self.formatException(record.exc_info)
        return json.dumps(event, default=str)


def configure_logging(level='info', stream=None):
    """Install a single JSON-lines handler on the `viser` logger.

    Library modules only create loggers; this is called by the command line entry point.
    Warnings issued with `warnings.warn` are routed through logging as well.
    """
    logger = logging.getLogger('viser')
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    logger.addHandler(handler)
    logger.setLevel(level.upper() if isinstance(level, str) else level)
    logger.propagate = False
    logging.captureWarnings(True)
    warnings_logger = logging.getLogger('py.warnings')
    for handler_ in list(warnings_logger.handlers):
        warnings_logger.removeHandler(handler_)
    warnings_logger.addHandler(handler)
    warnings_logger.propagate = False
    return logger
