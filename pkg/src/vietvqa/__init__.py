"""Deterministic cultural VQA engine: detections + DSL programs + knowledge base
-> consistency-checked Vietnamese explanations, with a full evaluation kit."""

__version__ = "0.1.0"
