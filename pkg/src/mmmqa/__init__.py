"""Multi-choice reading comprehension with a multi-step attention classifier and staged training."""
__version__ = "0.1.0"
