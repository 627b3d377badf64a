"""
Integration tests for ikd-mil.

:hierarchy: [Testing | Integration Tests]
:strategy: "Real training on tiny synthetic data through the public entry points"
"""
