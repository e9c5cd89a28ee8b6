"""Raindrop masking, refraction synthesis and diffusion inpainting."""

import json

from ._core import (
    DEFAULT_SEED,
    PSNR_CAP,
    DropwiperError,
    default_config,
    inpaint,
    load_image,
    load_mask,
    mask_score,
    psnr,
    render_drops,
    residual_mask,
    save_image,
    save_mask,
    sha256_file,
    ssim,
    write_raindrop_fixture,
)
from ._core import run_pipeline as _run_pipeline


def run_pipeline(config=None, **overrides):
    """Run the test-split pipeline. `config` is a dict or JSON string; keyword
    overrides replace top-level keys."""
    if config is None:
        config = {}
    elif isinstance(config, str):
        config = json.loads(config)
    cfg = dict(config)
    cfg.update({k: str(v) if k.endswith(("_root", "_dir")) else v for k, v in overrides.items()})
    return _run_pipeline(json.dumps(cfg))


__all__ = [
    "DEFAULT_SEED",
    "PSNR_CAP",
    "DropwiperError",
    "default_config",
    "inpaint",
    "load_image",
    "load_mask",
    "mask_score",
    "psnr",
    "render_drops",
    "residual_mask",
    "run_pipeline",
    "save_image",
    "save_mask",
    "sha256_file",
    "ssim",
    "write_raindrop_fixture",
]
