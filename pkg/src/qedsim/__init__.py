"""Sample-path simulation and limit-theorem verification for many-server queues."""
__version__ = "0.1.0"
