"""Early fake-tweet detection from exogenous and endogenous signals.

Subpackages follow the pipeline: ``datamodel`` (social objects), ``corpus``
(weak labels, rumour clusters, splits), ``knowledge`` (time-relative
evidence), ``textenc`` / ``hetgraph`` / ``coattn`` / ``fusion`` (model
blocks), ``training`` (ML + AT + VAT objective) and ``evalharness``.
"""

__version__ = "0.1.0"
