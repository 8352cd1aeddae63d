"""Negative/temperature selection policy, its rewards, objective and the interleaved trainer."""
