"""Generalized few-shot multi-label episodes, ProtoNet-ML / BatchBased
classifiers, and Seen/Unseen/HM AUC evaluation."""

__version__ = "0.1.0"

from ._kernels import BACKEND  # noqa: E402
