"""Simulation and analysis of eclipse attacks on Kademlia-style peer discovery."""

__version__ = "0.1.0"
