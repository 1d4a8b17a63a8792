"""Persistence, HTTP service, and CLI for the generation/composition stack."""
