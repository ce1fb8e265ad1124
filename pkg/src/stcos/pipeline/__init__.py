"""End-to-end orchestration: ingest, assemble, fit, summarize, simulate."""
