"""dsgpnp: Plug-and-play reconstruction with doubly stochastic NLM priors.

Packages:
    core: Generic plug-and-play loop, operator interfaces, condition checks and logging
    components: Denoisers and forward models for interpolation and tomography, phantoms
    run: Experiment runner, summaries and command line interface

Modules:
    utilities: Seeding and plain-text file formats shared by all packages
"""
