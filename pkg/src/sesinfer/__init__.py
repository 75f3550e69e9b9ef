"""Socioeconomic status inference from geotagged short texts.

Subpackages and modules follow the pipeline: ``corpus`` (parsing and text
cleaning), ``homeloc`` (home inference), ``census`` (income join and
inequality), ``occupation`` (job title matching), ``semantics``
(embeddings and topics), ``features``, ``learn`` (tree ensembles and
nested CV), ``evaluation`` and ``pipeline``/``cli`` (orchestration).
"""

__version__ = "0.1.0"
