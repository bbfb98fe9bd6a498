"""Attribute-conditioned instance grasping with data-efficient adaptation."""

__version__ = "0.1.0"
