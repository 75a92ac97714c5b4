"""HTTP inference sidecar for the medrag pipeline's provider protocol.

Exposes ``POST /embed``, ``POST /nli``, ``POST /generate`` and
``GET /health`` with the JSON shapes the pipeline's HTTP providers
speak, and an ``export-cache`` mode that precomputes a corpus into the
pipeline's file-backed provider format so runs can go fully offline.

The server deliberately does not import the pipeline package: every
shared convention (key hashing, tokenization, sentence segmentation,
store layout) is part of the documented wire/disk protocol and is
implemented here against that protocol.
"""

__version__ = "0.1.0"
