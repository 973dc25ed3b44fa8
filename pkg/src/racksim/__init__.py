"""Discrete-event simulator of a rack of flash storage servers behind a
programmable ToR switch that coordinates GC, read redirection, and I/O
scheduling."""

__version__ = "0.1.0"
