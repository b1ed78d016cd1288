"""
FedFV: federated learning with conflict-mitigating fair averaging
"""
__version__ = "0.1.0"
