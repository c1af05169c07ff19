"""Federated learning simulator for privacy-preserving learner analytics.

Subpackages map onto the pipeline stages: `scoring` turns raw tracking
variables into learning measures, `trainer` builds the local High/Low
performer classifier, `privacy` sanitizes outgoing parameter updates,
`transport` defines the encrypted wire protocol and simulated network,
`hub` runs rounds and consensus-gated aggregation, and `harness` ties it
all into end-to-end simulations with a CLI.
"""

__version__ = "0.1.0"
