"""Fault-injection harness: scriptable mock upstream, scenario runner,
overhead benchmark and gateway crash injection."""
