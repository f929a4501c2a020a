"""Test package for rkhselect."""
