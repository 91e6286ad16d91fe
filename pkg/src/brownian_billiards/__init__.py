"""
Heavy disk and light particle on a periodic dispersing billiard table: the
event-driven system, the frozen-disk billiard and its transport coefficients,
and the limit processes of the rescaled disk motion.
"""

__version__ = "0.1.0"
