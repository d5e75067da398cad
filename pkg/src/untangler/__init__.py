"""Untangler: split composite commits into coherent atomic concerns.

The pipeline turns a raw diff into statement-level change graphs, carves
them into minimal change subgraphs, infers the developer intent behind
each one with a chat model, and then groups and iteratively reviews the
grouping until every group holds a single concern.
"""

__version__ = "0.1.0"
