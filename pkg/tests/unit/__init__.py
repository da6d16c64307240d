"""Unit test fixtures and configuration."""
