
from viser.saliency import maps, gaze
from viser.saliency.maps import SaliencyMap, SaliencySource
# `viser.saliency.compile` depends on `viser.config` and is imported on demand.
