"""
Acceptance tests on the synthetic corpus.

These train several models over multiple seeds and take minutes.

Run them with:
    uv run poe test-integration
"""
