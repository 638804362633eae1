"""Anomaly-based network intrusion detection toolkit.

Two complementary detectors over recorded traffic: per-device rate
profiling against hourly/daily/weekly baselines, and classification of
payload chunks rendered as Hilbert-curve byte-class images. See the
capture, profiler, inventory, binvis, classifier, engine, and evalkit
modules; the `hilscan` command line binds them together.
"""

__version__ = "0.1.0"
