"""liforge: a late-interaction retrieval training and evaluation toolkit.

MaxSim scoring with dynamic query augmentation, normalized
knowledge-distillation losses, schedule-free optimization, teacher
ensembling, checkpoint averaging, BM25 dev-set mining, and ranking
metrics — runnable end to end at desk scale on synthetic data.
"""

__version__ = "0.1.0"
