
from viser.evaluation import metrics, splits, scoring
from viser.evaluation.metrics import apcer_at_bpcer, auroc, roc_points
from viser.evaluation.splits import SplitPlan, make_loto_splits
# `viser.evaluation.protocol` is imported on demand; it depends on the models package.
