"""gaitlab: a desk-scale dynamic-walking laboratory.

Planar compass-biped dynamics with plastic impacts, reduced models (LIPM with
ZMP/capture point, SLIP), a generic hybrid-system executor with Poincaré
limit-cycle analysis, virtual-constraint (HZD) control and gait optimization,
and QP-based runtime controllers, wrapped in a scenario CLI with structured
CSV/JSON logs.
"""

__version__ = "0.1.0"
