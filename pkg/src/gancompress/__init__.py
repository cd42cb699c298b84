"""GAN generator compression: magnitude pruning at four granularities,
consistency training against a frozen dense generator and pretrained
discriminator, a matrix of baseline recipes, and FID/PSNR/SSIM evaluation."""

__version__ = "0.1.0"
