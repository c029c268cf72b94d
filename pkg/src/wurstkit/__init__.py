"""Desk-scale three-stage cascaded latent diffusion toolkit.

Layout:
    backend / _kernels_*   hot loops (numba-jitted with a pure-numpy twin)
    autodiff, nn           tape-based reverse-mode engine and layers
    diffusion              schedule, noising, A/B objective, DDPM step, guidance
    textcond               hashed-vocabulary caption encoder
    vqgan                  stage A: VQ autoencoder with adversarial/perceptual losses
    compressor             semantic compressor producing the 16-channel latent
    stage_b, stage_c       latent refiner and compressed-latent prior
    pipeline               end-to-end text-to-image sampling
    training               datasets, optimizer, checkpoints, training loops
    evalkit                FID/IS, image manipulations, audits, benchmarks
    config, cli            run configuration file and operator entry point
"""

__version__ = "0.1.0"
