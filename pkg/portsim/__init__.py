"""
portsim - Profile Portability Simulator
Two-recommender ecosystem simulation measuring consumer and provider utility
under profile-portability policies.

Modules:
- dataset: interaction loading, k-core filtering, niche labeling
- ecosystem: consumers, items, providers, profile stores, exposure tracking
- recommenders: ALS, BPR and ItemKNN ranking with popularity fallback
- choice: utilities, softmax selection, switching decisions
- portability: the four profile-portability policies
- engine: seeded cycle/day simulation loop and trace I/O
- experiments: condition x algorithm x seed grid and aggregation
- reporting: CSV tables, manifest and plots
- synth: desk-scale synthetic dataset generator
- metrics: Prometheus counters
"""

__version__ = "1.0.0"
__author__ = "portsim maintainers"
