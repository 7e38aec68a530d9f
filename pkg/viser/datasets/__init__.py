from viser.datasets import manifest, from_simulations
from viser.datasets.manifest import (AttackType, DatasetManifest, IrisSample, Label, load_manifest,
                                     manifest_summary, write_manifest)
from viser.datasets.from_simulations import (ProtocolCorpus, SteeringCorpus, annotation_corpus, fixation_cloud,
                                             write_fixture_experiment)
