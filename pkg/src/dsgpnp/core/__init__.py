"""dsgpnp Core Library.

Modules:
    conditions: Checks of the convergence conditions of denoising operators
    logging: Customized logger for run tables and operator debug events
    operators: Interfaces of inversion and denoising operators, identity inversion
    pnp: Plug-and-play ADMM loop, residuals and choice of sigma_lambda
"""
