"""Tests for the fgamtest package."""
