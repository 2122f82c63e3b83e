"""tabcf: interpretable tabular classification with one-pass counterfactuals.

A single model answers three questions about each input row: which class it
belongs to (probabilities), why (a local linear decision rule), and what
minimal change would flip it to any other class (one counterfactual per
alternative class) — all from one forward pass.
"""

__version__ = "0.1.0"
