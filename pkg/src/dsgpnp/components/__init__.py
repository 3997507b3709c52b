"""Problem-specific components for plug-and-play reconstruction.

Modules:
    denoisers: NLM, DSG-NLM and external denoising operators
    interpolation: Sampling masks, interpolation inversion operator and Shepard baseline
    nlm: Weight matrices of non-local means and their doubly stochastic normalization
    phantoms: Synthetic ground truth images and tilt series simulation
    tomography: Projection geometry, robust tomography inversion operator and FBP baseline
"""
