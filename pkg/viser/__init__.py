# -*- coding: utf-8 -*-

"""Top-level package for viser."""

__version__ = '0.1.0'

import viser.utils
import viser.datasets
import viser.saliency
import viser.clustering
import viser.models
import viser.evaluation
import viser.embeddings
import viser.reporting
