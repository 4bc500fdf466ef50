"""Gridworld kitchen fetch tasks, simulated detection/segmentation features and a numpy PPO agent.

Modules:

- ``scene``: grid maps, objects, dynamics, visibility and BFS distances
- ``perception``: noisy detector/segmenter oracle and observation encoders
- ``reward``: the shaped fetch reward
- ``policy``: convolutional actor-critic with analytic gradients
- ``ppo``: rollouts, GAE, Adam and the training loop
- ``evaluation``: evaluation episodes, metrics and seed aggregation
- ``config`` / ``cli``: experiment files and the ``kitchen-fetch`` command
"""

__version__ = "0.1.0"
