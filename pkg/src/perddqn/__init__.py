"""DDQN + prioritized experience replay path planning on a 2D lidar grid world."""

__version__ = "0.1.0"
