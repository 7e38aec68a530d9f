"""Dataset manifest: the canonical list of iris samples every other stage refers to.

A manifest file is UTF-8 with one JSON object per line:

    {"sample_id": "bf-0001", "image_path": "images/bf-0001.png", "label": "bonafide",
     "attack_type": "bonafide", "source_corpus": "lab_a"}

Relative `image_path` values are resolved against the directory of the manifest file.
"""
import enum
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from json import JSONDecodeError
from pathlib import Path
from typing import Dict, Iterable, Tuple

import pandas as pd

from viser import utils
from viser.exceptions import ManifestParseError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_IMAGE_SIZE = (224, 224)

MANIFEST_KEYS = ('sample_id', 'image_path', 'label', 'attack_type', 'source_corpus')


class AttackType(str, enum.Enum):
    """Closed presentation attack taxonomy. `bonafide` marks genuine samples."""
    bonafide = 'bonafide'
    printout = 'printout'
    diseased = 'diseased'
    post_mortem = 'post_mortem'
    synthetic = 'synthetic'
    contacts_plus_print = 'contacts_plus_print'
    textured_contact = 'textured_contact'
    artificial = 'artificial'

    @classmethod
    def attacks(cls):
        """The seven non-bonafide tags, in reporting order."""
        return tuple(tag for tag in cls if tag is not cls.bonafide)

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            tags = ', '.join(tag.value for tag in cls)
            raise ValidationError(f"Unknown attack_type {value!r}. Expected one of: {tags}") from None


class Label(str, enum.Enum):
    bonafide = 'bonafide'
    attack = 'attack'

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            raise ValidationError(f"Unknown label {value!r}. Expected 'bonafide' or 'attack'") from None

    @property
    def target(self):
        """Class index used by models: 0 for bonafide, 1 for attack."""
        return int(self is Label.attack)


@dataclass(frozen=True)
class IrisSample:
    sample_id: str
    image_path: Path
    label: Label
    attack_type: AttackType
    source_corpus: str

    def __post_init__(self):
        if not self.sample_id:
            raise ValidationError("Empty sample_id")
        if (self.label is Label.attack) != (self.attack_type is not AttackType.bonafide):
            raise ValidationError(f"Sample {self.sample_id!r}: label {self.label.value!r} is inconsistent "
                                  f"with attack_type {self.attack_type.value!r}")

    @property
    def is_attack(self):
        return self.label is Label.attack

    def to_record(self, root=None):
        path = self.image_path
        if root is not None:
            try:
                path = path.relative_to(root)
            except ValueError:
                pass
        return dict(sample_id=self.sample_id, image_path=path.as_posix(), label=self.label.value,
                    attack_type=self.attack_type.value, source_corpus=self.source_corpus)


@dataclass(frozen=True)
class DatasetManifest:
    """Immutable collection of `IrisSample` sharing one image frame.

    Arguments:
        samples {tuple of IrisSample} -- The samples.

    Keyword Arguments:
        image_size {tuple} -- (height, width) all images are resized to (default: {(224, 224)})
    """
    samples: Tuple[IrisSample, ...]
    image_size: Tuple[int, int] = DEFAULT_IMAGE_SIZE
    _index: Dict[str, IrisSample] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'samples', tuple(self.samples))
        object.__setattr__(self, 'image_size', tuple(int(s) for s in self.image_size))
        index = {}
        for sample in self.samples:
            if sample.sample_id in index:
                raise ValidationError(f"Duplicate sample_id {sample.sample_id!r}")
            index[sample.sample_id] = sample
        object.__setattr__(self, '_index', index)
        if not any(s.attack_type is AttackType.bonafide for s in self.samples):
            raise ValidationError("Manifest has no bonafide samples")

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, sample_id):
        return self._index[sample_id]

    def __contains__(self, sample_id):
        return sample_id in self._index

    @property
    def sample_ids(self):
        return [s.sample_id for s in self.samples]

    def histogram(self):
        """Counts per AttackType (tags with no samples are included with count 0)."""
        counts = Counter(s.attack_type for s in self.samples)
        return {tag: counts.get(tag, 0) for tag in AttackType}

    def of_type(self, attack_type):
        attack_type = AttackType.parse(attack_type)
        return [s for s in self.samples if s.attack_type is attack_type]

    def subset(self, sample_ids: Iterable[str]):
        """Samples for `sample_ids`, in the order given."""
        return [self._index[sid] for sid in sample_ids]

    def content_hash(self):
        """Fingerprint of the manifest content, independent of sample order."""
        records = sorted((s.to_record() for s in self.samples), key=lambda r: r['sample_id'])
        return utils.fingerprint(dict(records=records, image_size=list(self.image_size)))


def _parse_record(record, path, line_number, root):
    if not isinstance(record, dict):
        raise ManifestParseError(path, line_number, f"expected a JSON object, got {type(record).__name__}")
    missing = [key for key in MANIFEST_KEYS if key not in record]
    if missing:
        raise ManifestParseError(path, line_number, f"missing keys {missing}")
    image_path = Path(record['image_path'])
    if not image_path.is_absolute():
        image_path = root / image_path
    try:
        return IrisSample(
            sample_id=str(record['sample_id']),
            image_path=image_path,
            label=Label.parse(record['label']),
            attack_type=AttackType.parse(record['attack_type']),
            source_corpus=str(record['source_corpus']),
        )
    except ValidationError as err:
        raise ValidationError(f"{path}:{line_number}: {err}") from None


def load_manifest(path, image_size=DEFAULT_IMAGE_SIZE):
    """Parse and validate a line-delimited manifest file.

    Arguments:
        path {str, Path} -- Path to the manifest.

    Keyword Arguments:
        image_size {tuple} -- (height, width) images are normalized to (default: {(224, 224)})

    Returns:
        DatasetManifest -- The validated manifest.
    """
    path = Path(path)
    root = path.parent
    samples = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except JSONDecodeError as err:
                raise ManifestParseError(path, line_number, f"malformed record ({err.msg})") from None
            samples.append(_parse_record(record, path, line_number, root))
    manifest = DatasetManifest(tuple(samples), image_size)
    logger.info("loaded manifest", extra=dict(path=str(path), n_samples=len(manifest)))
    return manifest


def write_manifest(manifest, path):
    """Serialize `manifest` in the line-delimited format read by `load_manifest`.
    Image paths below the manifest directory are written relative to it.
    """
    path = Path(path)
    root = path.parent
    return utils.write_jsonl(path, (s.to_record(root) for s in manifest.samples))


def manifest_summary(manifest):
    """Counts per (label, attack_type, source_corpus).

    Returns:
        pd.DataFrame -- Columns `label`, `attack_type`, `source_corpus`, `count`.
    """
    df = pd.DataFrame([dict(label=s.label.value, attack_type=s.attack_type.value,
                            source_corpus=s.source_corpus) for s in manifest.samples])
    return (df.groupby(['label', 'attack_type', 'source_corpus'], sort=True)
            .size()
            .rename('count')
            .reset_index())
