"""Quote-matching pipeline: from news corpora to a latent quoting-bias space.

The package is organized around the pipeline stages:

- ``corpus``: ingest transcripts, articles, and outlet metadata.
- ``align``: extract quoted spans and align them to transcript positions.
- ``dedupcluster``: drop wire duplicates, group matches into quote clusters.
- ``bigraph``: the outlet-to-quote graph, rewiring null model, surprise.
- ``describe``: per-outlet and per-category descriptive statistics.
- ``complete``: quote-matrix baselines and nuclear-norm matrix completion.
- ``latent``: SVD latent space, feature projections, correlations.
- ``pipeline`` / ``cli``: staged orchestration and the ``quotus`` command.
"""

__version__ = "0.1.0"
