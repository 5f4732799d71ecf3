"""Generate, check and score PDDL problem descriptions from instructions and scene annotations."""

__version__ = "0.1.0"
