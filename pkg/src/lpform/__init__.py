"""Link prediction at desk scale: PPR precomputation, cross-attention
pairwise encodings with PPR positional information, classical heuristic
baselines, and ranking evaluation."""

__version__ = "0.1.0"
