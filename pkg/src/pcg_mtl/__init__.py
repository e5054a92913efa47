"""Multi-task learning for heart murmur detection and clinical outcome
identification from phonocardiogram recordings, on a small numpy autograd engine.
"""

__version__ = "0.1.0"
