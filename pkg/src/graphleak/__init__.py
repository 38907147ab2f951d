"""graphleak: audits structural privacy leakage of DP-protected GNN explanations.

Reconstructs hidden graph adjacency from differentially private explanation
matrices (PrivX) or node features (PrivF) via conditional reverse diffusion,
and cross-checks every closed-form leakage bound against Monte-Carlo oracles.
"""

__version__ = "0.1.0"
