"""Tracking-by-detection MOT engine plus a tracker-hijacking attack simulator.

The package has three layers:

* core tracking: ``geometry``, ``estimation``, ``assignment``, ``tracking``
* attack machinery: ``attack`` (hijack / erase over an idealized AE channel)
  and ``detection_loss`` (erase/fabricate losses over a toy detector)
* evaluation: ``scenarios`` (file format + synthetic generators),
  ``experiments`` (sweeps), ``cli``
"""

__version__ = "0.1.0"
