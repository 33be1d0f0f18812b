"""Domain-generalization regression toolkit for EEG drowsiness estimation.

Trainers: AGG (pooled), FW-AGG (softmax feature weighting), ET (episodic
training with frozen domain regressors) and FWET (both combined), plus kNN and
ridge baselines, raw-signal feature extraction, a leave-one-subject-out
evaluation harness and a seeded synthetic multi-subject benchmark.
"""

__version__ = "0.1.0"
