"""Context-aware daily-life stress monitoring pipeline.

Signal cleaning, HRV and context feature extraction, EMA labeling,
k-NN imputation, from-scratch tree ensembles with grouped evaluation,
exact Shapley explanations, a smart EMA trigger, and a deterministic
simulator of the watch/phone/cloud collection stack.
"""

__version__ = "0.1.0"
