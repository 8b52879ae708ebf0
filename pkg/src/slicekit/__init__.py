"""slicekit: learning-based backward program slicing, end to end.

Pieces: a float64 autodiff tensor engine, a small Java-flavored language with
an error-tolerant parser, a dependence-graph oracle slicer for ground truth,
a copy-augmented encoder-decoder model, constrained beam-search decoding
(lexical mask + tree-similarity monotonicity), and a metrics/ablation harness.
"""

__version__ = "0.1.0"
