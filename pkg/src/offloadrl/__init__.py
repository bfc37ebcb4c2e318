"""Offline-trained local/cloud offloading policies for multimodal LLM inference."""

__version__ = "0.1.0"
