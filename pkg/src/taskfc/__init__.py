"""Population-level task-evoked functional connectivity (ptFCE) toolkit."""

__version__ = "0.1.0"
