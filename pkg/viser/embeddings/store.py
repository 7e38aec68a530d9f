"""On-disk embedding cache.

Each extractor gets a directory `<root>/embeddings/<key>/` holding binary part files and a
feather index. A part file is a sequence of little-endian records

    uint32 id_length | id bytes (utf-8) | uint32 n_values | n_values x float32

and the index maps every cached sample id to `(part, offset, length)`. Parts and the index
are written through a temporary file and a rename, so a crashed extraction leaves the
previous cache intact.
"""
import hashlib
import io
import logging
import re
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd

from viser import utils
from viser.models.data import ImageCache

logger = logging.getLogger(__name__)

_U32 = struct.Struct('<I')
INDEX_COLUMNS = ['sample_id', 'part', 'offset', 'length']


def encode_records(vectors: Dict[str, np.ndarray]):
    """Serialize `{sample_id: vector}`. Returns the bytes and the offset of each record."""
    buffer = io.BytesIO()
    offsets = {}
    for sid, values in vectors.items():
        offsets[sid] = buffer.tell()
        sid_bytes = sid.encode('utf-8')
        values = np.asarray(values, dtype='<f4').reshape(-1)
        buffer.write(_U32.pack(len(sid_bytes)))
        buffer.write(sid_bytes)
        buffer.write(_U32.pack(len(values)))
        buffer.write(values.tobytes())
    return buffer.getvalue(), offsets


def decode_record(data, offset=0):
    """Read one record at `offset`. Returns `(sample_id, values, next_offset)`."""
    (n_id,) = _U32.unpack_from(data, offset)
    offset += _U32.size
    sid = bytes(data[offset:offset + n_id]).decode('utf-8')
    offset += n_id
    (n_values,) = _U32.unpack_from(data, offset)
    offset += _U32.size
    values = np.frombuffer(data, dtype='<f4', count=n_values, offset=offset).astype(np.float32)
    return sid, values, offset + 4 * n_values


@dataclass
class EmbeddingSet:
    """Embeddings of a set of samples from one extractor."""
    extractor_id: str
    vectors: Dict[str, np.ndarray] = field(default_factory=dict)
    gaps: List[str] = field(default_factory=list)

    def __len__(self):
        return len(self.vectors)

    @property
    def dim(self):
        return len(next(iter(self.vectors.values()))) if self.vectors else None

    def matrix(self, sample_ids):
        """Stack vectors of `sample_ids` into an (n, d) array. Missing ids raise `KeyError`."""
        if not sample_ids:
            return np.zeros((0, self.dim or 0), dtype=np.float32)
        return np.stack([self.vectors[sid] for sid in sample_ids])


class EmbeddingStore:
    """Cache of embeddings of one extractor under `<root>/embeddings/`.

    Arguments:
        root {str, Path} -- Output root.
        extractor_id {str} -- Id of the extractor the vectors come from.
    """
    def __init__(self, root, extractor_id):
        self.extractor_id = extractor_id
        slug = re.sub(r'[^A-Za-z0-9_.-]+', '_', extractor_id)[:48]
        digest = hashlib.sha256(extractor_id.encode()).hexdigest()[:12]
        self.path = Path(root) / 'embeddings' / f"{slug}-{digest}"

    @property
    def index_path(self):
        return self.path / 'index.feather'

    def read_index(self) -> pd.DataFrame:
        if not self.index_path.exists():
            return pd.DataFrame({c: pd.Series(dtype='int64' if c in ('offset', 'length') else 'object')
                                 for c in INDEX_COLUMNS})
        return pd.read_feather(self.index_path)

    def cached_ids(self):
        return set(self.read_index()['sample_id'])

    def load(self, sample_ids=None) -> EmbeddingSet:
        """Read cached vectors, all of them or those of `sample_ids` that are present."""
        index = self.read_index()
        if sample_ids is not None:
            index = index[index['sample_id'].isin(set(sample_ids))]
        out = EmbeddingSet(self.extractor_id)
        for part, rows in index.groupby('part', sort=True):
            data = (self.path / part).read_bytes()
            for sid, offset, length in zip(rows['sample_id'], rows['offset'], rows['length']):
                got, values, _ = decode_record(data, int(offset))
                if got != sid or len(values) != length:
                    raise ValueError(f"Corrupt embedding record for {sid!r} in {self.path / part}")
                out.vectors[sid] = values
        return out

    def append(self, vectors: Dict[str, np.ndarray]):
        """Write `vectors` as a new part and extend the index."""
        if not vectors:
            return None
        data, offsets = encode_records(vectors)
        part = f"part-{hashlib.sha256(data).hexdigest()[:16]}.bin"
        utils.atomic_write_bytes(self.path / part, data)
        index = self.read_index()
        index = index[~index['sample_id'].isin(set(vectors))]
        new = pd.DataFrame(dict(sample_id=list(vectors), part=part, offset=[offsets[s] for s in vectors],
                                length=[len(v) for v in vectors.values()]))
        index = pd.concat([index, new], ignore_index=True).astype(dict(offset='int64', length='int64'))
        buffer = io.BytesIO()
        index.reset_index(drop=True).to_feather(buffer)
        utils.atomic_write_bytes(self.index_path, buffer.getvalue())
        utils.atomic_write_json(self.path / 'extractor.json', dict(extractor_id=self.extractor_id))
        return part


def _batches(items, size):
    return [items[i:i + size] for i in range(0, len(items), size)]


def extract_embeddings(extractor, samples, root, image_size=(224, 224), batch_size=16, parallelism=1,
                       image_cache=None) -> EmbeddingSet:
    """Embeddings of `samples`, computing only those not cached for `extractor.extractor_id`.

    Batches are sent to the extractor from up to `parallelism` threads; results are
    written to the cache from the calling thread once all batches are back.

    Arguments:
        extractor {Extractor} -- Extractor adapter.
        samples {list of IrisSample} -- Samples to embed.
        root {str, Path} -- Output root of the cache.

    Keyword Arguments:
        image_size {tuple} -- Size images are loaded at. (default: {(224, 224)})
        batch_size {int} -- Images per extractor call. (default: {16})
        parallelism {int} -- Concurrent extractor calls. (default: {1})
        image_cache {ImageCache} -- Shared cache. (default: {None})

    Returns:
        EmbeddingSet -- One vector per sample, with failed samples listed in `gaps`.
            `ExtractorUnavailable` propagates when the extractor cannot be reached.
    """
    samples = list(samples)
    store = EmbeddingStore(root, extractor.extractor_id)
    cached = store.cached_ids()
    todo = [s for s in samples if s.sample_id not in cached]
    new, gaps = {}, []
    if todo:
        image_cache = ImageCache(image_size) if image_cache is None else image_cache
        images, degraded = image_cache.get(todo)
        degraded = set(degraded)
        readable = [i for i, s in enumerate(todo) if s.sample_id not in degraded]
        gaps.extend(s.sample_id for s in todo if s.sample_id in degraded)
        batches = _batches(readable, batch_size)
        with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
            outputs = list(pool.map(lambda idx: extractor.embed(images[idx]), batches))
        for idx, out in zip(batches, outputs):
            ok = np.isfinite(out).all(1) & (out.shape[1] > 0)
            for i, row, keep in zip(idx, out, ok):
                if keep:
                    new[todo[i].sample_id] = row
                else:
                    gaps.append(todo[i].sample_id)
        store.append(new)
    result = store.load([s.sample_id for s in samples])
    result.gaps = sorted(set(gaps))
    dims = {len(v) for v in result.vectors.values()}
    if len(dims) > 1:
        raise ValueError(f"Embeddings of {extractor.extractor_id!r} have mixed lengths {sorted(dims)}")
    logger.info("embeddings", extra=dict(extractor_id=extractor.extractor_id, n_samples=len(samples),
                                         n_cached=len(samples) - len(todo), n_new=len(new), n_gaps=len(result.gaps)))
    return result
