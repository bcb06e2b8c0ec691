"""Meta-learning of graph neural network power control policies for
interference networks with changing topologies."""

__version__ = '0.1.0'
