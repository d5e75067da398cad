"""Shared exception base for the untangling pipeline.

Every module defines its own exception types next to the code that raises
them; they all derive from :class:`UntanglerError` so the CLI can catch
pipeline failures uniformly and tag them with the module they came from.
"""

from __future__ import annotations


class UntanglerError(Exception):
    """Base class for all pipeline errors."""

    @property
    def module_tag(self) -> str:
        return type(self).__module__.rsplit(".", 1)[-1]
