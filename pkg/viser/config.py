"""Experiment configuration.

One JSON file describes an experiment; `--set dotted.key=value` overrides win over the
file. Relative paths in the file resolve against the file's directory.
"""
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from viser import utils
from viser.exceptions import ConfigError
from viser.models.training import TrainingConfig

logger = logging.getLogger(__name__)

PATH = dict(path=True)


@dataclass
class SaliencyInputs:
    masks_dir: Optional[Path] = field(default=None, metadata=PATH)
    annotations_dir: Optional[Path] = field(default=None, metadata=PATH)
    gaze: Optional[Path] = field(default=None, metadata=PATH)
    remap: Optional[Path] = field(default=None, metadata=PATH)


@dataclass
class SaliencyConfig:
    """Saliency compilation settings.

    `sigma_fraction` is the gaze Gaussian width as a fraction of image width. `kernels`
    holds the blur kernel size of each hand-annotation source (0 means no blur).
    """
    inputs: SaliencyInputs = field(default_factory=SaliencyInputs)
    sigma_fraction: float = 0.05
    kernels: Dict[str, int] = field(default_factory=lambda: dict(hand_low=0, hand_equal=5, hand_high=10))
    min_cluster_size: int = 5
    min_samples: int = 3
    allow_single_cluster: bool = True


@dataclass
class ProtocolConfig:
    methods: List[str] = field(default_factory=lambda: ['xent'])
    seeds: List[int] = field(default_factory=lambda: list(range(12)))
    bonafide_test_fraction: float = 0.3
    bpcer_target: float = 0.01
    baseline: str = 'xent'
    jobs: int = 1


@dataclass
class ExtractorConfig:
    """Embedding extractor. `kind` is 'intensity' (deterministic stub), 'torch_hub' (local
    runtime) or 'remote' (HTTP inference service).
    """
    kind: str = 'intensity'
    model: str = 'dinov2_vitb14'
    repo: str = 'facebookresearch/dinov2'
    endpoint: Optional[str] = None
    token_env: str = 'VISER_EXTRACTOR_TOKEN'
    timeout: float = 30.
    retries: int = 3
    backoff: float = 0.5
    batch_size: int = 16
    parallelism: int = 4


@dataclass
class ProbeConfig:
    C: float = 1.
    gamma: str = 'scale'
    max_iter: int = 1000


@dataclass
class ExperimentConfig:
    manifest: Optional[Path] = field(default=None, metadata=PATH)
    image_size: Tuple[int, int] = (224, 224)
    output_root: Path = field(default=Path('viser-output'), metadata=PATH)
    saliency: SaliencyConfig = field(default_factory=SaliencyConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    path: Optional[Path] = None

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.training.image_size = self.image_size

    def to_dict(self):
        out = dataclasses.asdict(self)
        out.pop('path')
        return json.loads(utils.canonical_json(out))

    def fingerprint(self):
        """SHA-256 of the canonical JSON of the resolved configuration."""
        return utils.fingerprint(self.to_dict())

    @property
    def resolved_output_root(self):
        return utils.output_root(self.output_root)

    def validate(self, check_paths=True) -> List[str]:
        """Field-level problems, empty when the config is usable."""
        from viser.evaluation.protocol import METHODS
        msgs = []
        if len(self.image_size) != 2 or min(self.image_size) < 1:
            msgs.append(f"image_size: needs two positive integers, got {list(self.image_size)}")
        if self.manifest is None:
            msgs.append("manifest: required")
        elif check_paths and not Path(self.manifest).exists():
            msgs.append(f"manifest: file not found: {self.manifest}")
        if check_paths:
            for f in dataclasses.fields(self.saliency.inputs):
                value = getattr(self.saliency.inputs, f.name)
                if value is not None and not Path(value).exists():
                    msgs.append(f"saliency.inputs.{f.name}: not found: {value}")
        sal = self.saliency
        if sal.sigma_fraction <= 0:
            msgs.append(f"saliency.sigma_fraction: needs to be > 0, got {sal.sigma_fraction}")
        for key in ('hand_low', 'hand_equal', 'hand_high'):
            kernel = sal.kernels.get(key, None)
            if not isinstance(kernel, int) or isinstance(kernel, bool) or kernel < 0:
                msgs.append(f"saliency.kernels.{key}: needs a non-negative integer, got {kernel!r}")
        if sal.min_cluster_size < 2:
            msgs.append(f"saliency.min_cluster_size: needs to be >= 2, got {sal.min_cluster_size}")
        if sal.min_samples < 1:
            msgs.append(f"saliency.min_samples: needs to be >= 1, got {sal.min_samples}")
        msgs.extend(self.training.validate())
        proto = self.protocol
        unknown = [m for m in proto.methods if m not in METHODS]
        if unknown:
            msgs.append(f"protocol.methods: unknown {unknown}. Known: {', '.join(METHODS)}")
        if proto.baseline not in METHODS:
            msgs.append(f"protocol.baseline: unknown method {proto.baseline!r}")
        if not proto.seeds or len(set(proto.seeds)) != len(proto.seeds):
            msgs.append(f"protocol.seeds: needs distinct seeds, got {proto.seeds}")
        if not 0. < proto.bonafide_test_fraction < 1.:
            msgs.append(f"protocol.bonafide_test_fraction: needs to be in (0, 1), got {proto.bonafide_test_fraction}")
        if not 0. <= proto.bpcer_target <= 1.:
            msgs.append(f"protocol.bpcer_target: needs to be in [0, 1], got {proto.bpcer_target}")
        if proto.jobs < 1:
            msgs.append(f"protocol.jobs: needs to be >= 1, got {proto.jobs}")
        ext = self.extractor
        if ext.kind not in ('intensity', 'torch_hub', 'remote'):
            msgs.append(f"extractor.kind: needs 'intensity', 'torch_hub' or 'remote', got {ext.kind!r}")
        if ext.kind == 'remote' and not ext.endpoint:
            msgs.append("extractor.endpoint: required for the remote extractor")
        if ext.retries < 0 or ext.parallelism < 1 or ext.batch_size < 1:
            msgs.append("extractor: retries needs to be >= 0, parallelism and batch_size >= 1")
        if self.probe.C <= 0:
            msgs.append(f"probe.C: needs to be > 0, got {self.probe.C}")
        return msgs

    def check(self, check_paths=True):
        """Raise `ConfigError` with all field-level messages if the config is not usable."""
        msgs = self.validate(check_paths)
        if msgs:
            raise ConfigError(msgs)
        return self


def _from_dict(cls, data, prefix, root, msgs):
    if not isinstance(data, dict):
        msgs.append(f"{prefix or '<root>'}: expected an object, got {type(data).__name__}")
        return cls()
    defaults = cls()
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if key not in names or key == 'path':
            msgs.append(f"{name}: unknown key")
            continue
        default = getattr(defaults, key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _from_dict(type(default), value, f"{name}.", root, msgs)
        elif names[key].metadata.get('path') and value is not None:
            path = Path(value).expanduser()
            kwargs[key] = path if path.is_absolute() or root is None else root / path
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def from_dict(data, root=None) -> ExperimentConfig:
    """Build an `ExperimentConfig` from a parsed JSON object. Unknown keys raise `ConfigError`."""
    msgs = []
    config = _from_dict(ExperimentConfig, data, '', root, msgs)
    if msgs:
        raise ConfigError(msgs)
    return config


def load_config(path, overrides=()) -> ExperimentConfig:
    """Load a JSON experiment config and apply `dotted.key=value` overrides.

    Arguments:
        path {str, Path} -- Config file.

    Keyword Arguments:
        overrides {list} -- Strings `dotted.key=value`. (default: {()})

    Returns:
        ExperimentConfig -- Resolved configuration. Nothing is checked against the
            filesystem here; see `ExperimentConfig.check`.
    """
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError([f"config: file not found: {path}"]) from None
    except json.JSONDecodeError as err:
        raise ConfigError([f"config: invalid JSON at line {err.lineno}: {err.msg}"]) from None
    config = from_dict(data, path.resolve().parent)
    config.path = path
    apply_overrides(config, overrides)
    logger.debug("loaded config", extra=dict(path=str(path), fingerprint=config.fingerprint()))
    return config


def _coerce(raw, current):
    if isinstance(current, bool):
        if raw.lower() in ('1', 'true', 'yes', 'on'):
            return True
        if raw.lower() in ('0', 'false', 'no', 'off'):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, (list, tuple)):
        if raw.startswith('['):
            items = json.loads(raw)
        else:
            items = [v.strip() for v in raw.split(',') if v.strip()]
        if current:
            kind = type(current[0])
            items = [kind(v) for v in items]
        else:
            items = [_json_or_str(v) for v in items]
        return type(current)(items)
    if isinstance(current, dict):
        value = json.loads(raw)
        if not isinstance(value, dict):
            raise ValueError(f"expected a JSON object, got {raw!r}")
        return value
    if isinstance(current, Path):
        return Path(raw)
    if raw.lower() in ('none', 'null'):
        return None
    return _json_or_str(raw)


def _json_or_str(raw):
    if not isinstance(raw, str):
        return raw
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(config, overrides):
    """Apply `dotted.key=value` strings in place. Values are coerced to the type of the
    current value; lists are comma separated. Keys may also address dict entries, e.g.
    `saliency.kernels.hand_high=7`.
    """
    msgs = []
    for item in overrides or ():
        key, sep, raw = str(item).partition('=')
        if not sep:
            msgs.append(f"--set {item!r}: expected dotted.key=value")
            continue
        *parents, leaf = key.strip().split('.')
        target = config
        try:
            for part in parents:
                target = target[part] if isinstance(target, dict) else getattr(target, part)
            if isinstance(target, dict):
                current = target.get(leaf, None)
            elif dataclasses.is_dataclass(target) and leaf in {f.name for f in dataclasses.fields(target)}:
                current = getattr(target, leaf)
            else:
                raise AttributeError(leaf)
        except (AttributeError, KeyError, TypeError):
            msgs.append(f"{key}: unknown key")
            continue
        try:
            value = _coerce(raw.strip(), current)
        except (ValueError, TypeError) as err:
            msgs.append(f"{key}: {err}")
            continue
        if isinstance(target, dict):
            target[leaf] = value
        else:
            setattr(target, leaf, value)
    if msgs:
        raise ConfigError(msgs)
    if isinstance(config, ExperimentConfig):
        config.__post_init__()
    return config


def write_config(config: ExperimentConfig, path):
    """Write `config` as JSON (absolute paths)."""
    return utils.atomic_write_json(path, config.to_dict())
