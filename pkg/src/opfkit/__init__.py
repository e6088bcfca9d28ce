"""Second-order-cone relaxations of optimal power flow with exactness certificates."""
__version__ = "0.1.0"
