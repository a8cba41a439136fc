"""Reference oracle processes speaking the NDJSON prediction protocol."""
