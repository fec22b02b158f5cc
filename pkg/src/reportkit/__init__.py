"""Desk-scale remote usage monitoring and reporting toolkit.

Scripted smartphone and desktop agents collect observations on a virtual
clock, sync them to a central reporting service over a store-and-forward
protocol, a policy engine raises alerts on improper usage, and a
relevance evaluator computes session rating statistics.
"""

__version__ = "0.1.0"
