# Shared helpers used across the Blockout package
