"""Support tooling: config schema and provenance."""
