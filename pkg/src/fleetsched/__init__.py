"""Fleet scheduling and execution suite for mobile-robot fleets.

The pipeline has two layers.  The scheduling layer turns a scenario
(road graph with narrow/wide capacities, tasks with time windows and
precedence, battery-limited vehicles) into a conflict-free,
time-stamped schedule.  The execution layer runs that schedule in a
2D discrete-time simulation where every robot follows a local
reference trajectory produced by an urgency-aware planner and tracked
by a model predictive controller.
"""

from fleetsched.environment import Scenario, load_scenario, shipped_scenario_path

__all__ = ["Scenario", "load_scenario", "shipped_scenario_path"]

__version__ = "0.1.0"
