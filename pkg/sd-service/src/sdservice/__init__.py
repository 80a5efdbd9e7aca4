"""Denoising backend service for the meshtex texturing client.

The package speaks the client's HTTP protocol exactly; what sits behind
it is a deterministic CPU model, which is all the protocol tests and
offline texturing runs need. Swapping in a real checkpoint is a
deployment concern, not a contract change.
"""

from .app import SessionState, create_app
from .model import StubModel

__all__ = ["create_app", "SessionState", "StubModel"]
