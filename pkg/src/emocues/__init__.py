"""Emotion-cue extraction and two-step multi-modal fusion for conversational emotion tasks."""

__version__ = "0.1.0"
