
from viser.clustering.hdbscan import ClusterLabeling, denoise_fixations, hdbscan_labels
