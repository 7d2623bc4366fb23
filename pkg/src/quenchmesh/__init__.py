"""Adaptive moving-mesh simulation of fourth-order MEMS touchdown.

Two cooperating halves:

* a moving-mesh finite-element simulator for
  u_t = -eps^2 Lap^2 u - 1/(1+u)^2 on 2D domains with holes, and
* an asymptotic prediction engine (boundary-layer profiles plus the
  domain skeleton) that forecasts where touchdown happens.
"""

from . import errors
from .geometry import DomainSpec, preset_domain, load_domain_file

__all__ = ["errors", "DomainSpec", "preset_domain", "load_domain_file"]
__version__ = "0.1.0"
