"""Test package for airway-gvf."""
