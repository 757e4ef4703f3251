"""Desk-scale sentence embedding toolkit.

Two encoders (transformer and deep averaging network), multi-task training,
angular similarity, a transfer-learning harness, WEAT bias tests and a
resource benchmark, all on a small numpy autograd core.
"""

__version__ = "0.1.0"
CHECKPOINT_FORMAT_VERSION = 1
