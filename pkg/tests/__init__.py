"""Tests for the latentplan package."""
