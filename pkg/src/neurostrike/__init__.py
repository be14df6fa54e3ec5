"""Neuronal jamming/flooding attack simulations over a maze-solving CNN
and its Izhikevich spiking-network twin."""

__version__ = "0.1.0"
