"""Temporal-logic trajectory planning for tilted multirotors.

Subpackages and modules:

- ``stlplan.stl``: formulas, text syntax, exact and smooth robustness
- ``stlplan.dynamics``: multirotor model, RK4 integration, energy term
- ``stlplan.mission``: handover scenario geometry and the mission formula
- ``stlplan.planner``: smooth-robustness trajectory optimization
- ``stlplan.risk``: VaR/CVaR bounds under random human pose
- ``stlplan.replanner``: deviation-triggered segment replanning
- ``stlplan.simloop``: closed-loop tracking simulation
- ``stlplan.cli``: command-line entry point
"""
__version__ = "0.1.0"
