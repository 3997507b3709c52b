"""Experiment execution.

Modules:
    cli: Command line interface of the `dsgpnp` console script
    postprocessor: Summaries of reconstruction experiments
    runner: Experiment configuration and runner for all experiments
"""
