"""Direct-messaging network traffic simulator.

Trains a lognormal-mixture temporal point process on communication logs
and generates timestamped, multi-party email/IM traffic with assembled
conversation threads plus a realism evaluation harness.
"""

__version__ = "0.1.0"
