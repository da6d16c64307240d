"""Integration test fixtures and configuration."""
