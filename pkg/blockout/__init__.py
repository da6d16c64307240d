"""
Blockout: stochastic regularization with learned cluster-membership weight masks.
"""

__version__ = "0.1.0"
