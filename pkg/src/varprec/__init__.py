"""varprec: variable-precision computing toolkit.

Subpackages cover the eBFP storage format and exact-then-round scalar
arithmetic (:mod:`varprec.ebfp`), the stochastic error-propagation model
(:mod:`varprec.errormodel`), recorded expression graphs
(:mod:`varprec.graph`), precision-assignment planners
(:mod:`varprec.optimizer`), and the zero-forcing precoding case study
(:mod:`varprec.mimo`).
"""

__version__ = "0.1.0"

from .ebfp import (  # noqa: F401
    EbfpNumber,
    EbfpParams,
    Flag,
    arith,
    decode,
    encode,
    format_vector,
    parse_vector,
    round_to_precision,
    spec_table,
)
