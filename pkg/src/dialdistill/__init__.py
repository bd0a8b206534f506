"""Multi-domain dialogue generation with teacher-student knowledge transfer."""

__version__ = "0.1.0"
