"""Two-stage reading of seal inscriptions: detect characters, classify them, group them into lines.

Subpackages: ``synthseal`` renders synthetic seals with exact ground truth,
``infer`` holds the model backends. The evaluation maths is in ``metrics``
and cross-validation runs through ``harness``.
"""

__version__ = "0.1.0"
