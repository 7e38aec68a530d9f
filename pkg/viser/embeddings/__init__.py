
from viser.embeddings import extractors, store, probes
from viser.embeddings.extractors import IntensityExtractor, RemoteExtractor, TorchHubExtractor, make_extractor
from viser.embeddings.probes import ProbeKind, fit_probe
from viser.embeddings.store import EmbeddingStore, extract_embeddings
