"""blockdrone: block-programmed drone missions, simulated flight, and monocular mapping.

The pieces line up as a small robotics stack:

  bus       topic broker + JSON envelope protocol (TCP / WebSocket)
  missions  block-program parser and interpreter
  sim       quadrotor dynamics and synthetic camera
  slam      feature tracking, two-view geometry, point-cloud mapping
  mapeval   PLY/TUM persistence and trajectory error metrics
  runtime   deterministic in-process wiring of all of the above
  cli       serve / run / eval / scene-gen entry points
"""

__version__ = "0.1.0"
