"""Feedback-controlled optomechanical Stirling engine simulator."""
__version__ = "0.1.0"
