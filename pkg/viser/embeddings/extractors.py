"""Embedding extractors.

An extractor maps a batch of grayscale images (n, 1, H, W) in [0, 1] to an (n, d) float32
array. Rows of samples the extractor failed on are NaN. `extractor_id` names the model
and its configuration; the embedding cache is keyed by it.
"""
import base64
import io
import logging
import os
import threading

import numpy as np
import requests
import torch
import torch.nn.functional as F
from PIL import Image
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from viser.exceptions import ExtractorUnavailable

logger = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class Extractor:
    """Interface for extractors."""
    extractor_id = NotImplemented
    dim = None

    def __init__(self):
        self.n_calls = 0
        self.n_images = 0
        self._count_lock = threading.Lock()

    def _count(self, n):
        with self._count_lock:
            self.n_calls += 1
            self.n_images += n

    def embed(self, images):
        raise NotImplementedError


class IntensityExtractor(Extractor):
    """Deterministic stub: mean intensity `m` of an image maps to the vector `(m, 1 - m)`."""
    extractor_id = 'intensity'
    dim = 2

    def embed(self, images):
        images = np.asarray(images, dtype=np.float64)
        self._count(len(images))
        m = images.reshape(len(images), -1).mean(1)
        return np.stack([m, 1. - m], axis=1).astype(np.float32)


class TorchHubExtractor(Extractor):
    """Local inference with a torch.hub vision transformer; the CLS token is the embedding
    (768 values for DINOv2-Base, `dinov2_vitb14`).

    Grayscale images are replicated to three channels, resized to `input_size` and
    normalized with the ImageNet statistics.

    Keyword Arguments:
        repo {str} -- Hub repository. (default: {'facebookresearch/dinov2'})
        model {str} -- Hub entry point. (default: {'dinov2_vitb14'})
        device {str} -- Torch device. If 'None' use cuda when available. (default: {None})
        input_size {int} -- Side length fed to the model, a multiple of the patch size. (default: {224})
    """
    def __init__(self, repo='facebookresearch/dinov2', model='dinov2_vitb14', device=None, input_size=224):
        super().__init__()
        self.repo = repo
        self.model = model
        self.device = torch.device(device or ('cuda' if torch.cuda.is_available() else 'cpu'))
        self.input_size = input_size
        self._net = None
        self._load_lock = threading.Lock()

    @property
    def extractor_id(self):
        return f"torch_hub:{self.repo}:{self.model}:{self.input_size}"

    def _load(self):
        with self._load_lock:
            if self._net is None:
                try:
                    net = torch.hub.load(self.repo, self.model)
                except Exception as err:
                    raise ExtractorUnavailable(f"Could not load {self.repo}:{self.model} from torch.hub: {err}") from err
                self._net = net.to(self.device).eval()
        return self._net

    def _preprocess(self, images):
        x = torch.as_tensor(np.asarray(images, dtype=np.float32))
        x = F.interpolate(x, size=(self.input_size, self.input_size), mode='bilinear', align_corners=False)
        x = x.expand(-1, 3, -1, -1)
        mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
        return ((x - mean) / std).to(self.device)

    def embed(self, images):
        net = self._load()
        self._count(len(images))
        with torch.no_grad():
            out = net(self._preprocess(images))
        out = out.float().cpu().numpy()
        self.dim = out.shape[1]
        return out


def _encode_png(image):
    buffer = io.BytesIO()
    Image.fromarray(np.round(np.clip(image[0], 0., 1.) * 255).astype(np.uint8)).save(buffer, format='PNG')
    return base64.b64encode(buffer.getvalue()).decode('ascii')


class RemoteExtractor(Extractor):
    """Client of an HTTP inference service.

    Sends `POST <endpoint>` with JSON `{"model": ..., "images": [<base64 png>, ...]}` and
    expects `{"embeddings": [[...] or null, ...]}` in the same order; `null` marks a
    per-sample failure. Connection errors and 429/5xx responses are retried with
    exponential backoff.

    Arguments:
        endpoint {str} -- Service URL.

    Keyword Arguments:
        model {str} -- Model name sent with each request. (default: {'dinov2_vitb14'})
        token_env {str} -- Environment variable holding a bearer token. (default: {'VISER_EXTRACTOR_TOKEN'})
        timeout {float} -- Request timeout in seconds. (default: {30.})
        retries {int} -- Retries after the first attempt. (default: {3})
        backoff {float} -- Backoff factor in seconds. (default: {0.5})
    """
    def __init__(self, endpoint, model='dinov2_vitb14', token_env='VISER_EXTRACTOR_TOKEN', timeout=30.,
                 retries=3, backoff=0.5, session=None):
        super().__init__()
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self.retries = retries
        self.session = session or self._make_session(retries, backoff)
        token = os.environ.get(token_env, None)
        if token:
            self.session.headers['Authorization'] = f"Bearer {token}"

    @staticmethod
    def _make_session(retries, backoff):
        retry = Retry(total=retries, connect=retries, read=retries, backoff_factor=backoff,
                      status_forcelist=(429, 500, 502, 503, 504), allowed_methods=frozenset(['POST']),
                      raise_on_status=False)
        session = requests.Session()
        session.mount('http://', HTTPAdapter(max_retries=retry))
        session.mount('https://', HTTPAdapter(max_retries=retry))
        return session

    @property
    def extractor_id(self):
        return f"remote:{self.endpoint}:{self.model}"

    def embed(self, images):
        payload = dict(model=self.model, images=[_encode_png(img) for img in images])
        self._count(len(images))
        try:
            r = self.session.post(self.endpoint, json=payload, timeout=self.timeout)
            r.raise_for_status()
            rows = r.json()['embeddings']
        except (requests.RequestException, ValueError, KeyError) as err:
            raise ExtractorUnavailable(f"Extractor at {self.endpoint} unavailable after {self.retries} "
                                       f"retries: {err}") from err
        if len(rows) != len(images):
            raise ExtractorUnavailable(f"Extractor returned {len(rows)} embeddings for {len(images)} images")
        dim = next((len(row) for row in rows if row is not None), self.dim)
        out = np.full((len(images), dim or 0), np.nan, dtype=np.float32)
        for i, row in enumerate(rows):
            if row is not None:
                out[i] = row
        self.dim = dim
        return out


def make_extractor(settings) -> Extractor:
    """Build an extractor from an `ExtractorConfig`."""
    if settings.kind == 'intensity':
        return IntensityExtractor()
    if settings.kind == 'torch_hub':
        return TorchHubExtractor(settings.repo, settings.model)
    if settings.kind == 'remote':
        return RemoteExtractor(settings.endpoint, settings.model, settings.token_env, settings.timeout,
                               settings.retries, settings.backoff)
    raise ValueError(f"Unknown extractor kind {settings.kind!r}")
