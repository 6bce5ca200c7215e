"""Command-line entry points: serve, export, gen-synthetic.

Every flag can also be set through an environment variable with the
PATHTILES_ prefix (e.g. PATHTILES_SERVE_PORT=9000).
"""
from __future__ import annotations

import dataclasses
import sys

import click

from .manifest import load_manifest
from .patcher import SamplerParams
from .pipeline import StreamConfig, export_shards
from .slide import generate_synthetic_slide
from .stain import HsvRanges
from . import server as server_mod


def _parse_mpp(_ctx, _param, value: str):
    try:
        choices = tuple(float(v) for v in value.split(","))
    except ValueError:
        raise click.BadParameter(f"cannot parse mpp list {value!r}")
    if not choices:
        raise click.BadParameter("mpp list is empty")
    return choices


def _stream_config(tile_size, mpp, foreground_threshold, hsv_filter,
                   hed_sigma, batch_size, seed) -> StreamConfig:
    return StreamConfig(
        sampler=SamplerParams(tile_size_px=tile_size, mpp_choices=mpp,
                              foreground_threshold=foreground_threshold),
        hsv=HsvRanges() if hsv_filter == "on" else None,
        hed_sigma=None if hed_sigma <= 0 else hed_sigma,
        batch_size=batch_size,
        seed=seed,
    )


_sampling_options = [
    click.option("--tile-size", default=256, show_default=True, type=int),
    click.option("--mpp", default="2,1,0.5,0.25", show_default=True,
                 callback=_parse_mpp, help="Comma-separated µm/px choices."),
    click.option("--foreground-threshold", default=0.4, show_default=True,
                 type=float),
    click.option("--hsv-filter", default="on", show_default=True,
                 type=click.Choice(["on", "off"])),
    click.option("--hed-sigma", default=0.05, show_default=True, type=float,
                 help="HED augmentation spread; <= 0 disables augmentation."),
    click.option("--batch-size", default=12, show_default=True, type=int),
    click.option("--seed", default=0, show_default=True, type=int),
]


def _with_sampling_options(cmd):
    for opt in reversed(_sampling_options):
        cmd = opt(cmd)
    return cmd


@click.group()
def main():
    """Whole-slide tile sampling, augmentation, and streaming."""


@main.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=0, show_default=True, type=int,
              help="0 picks a free port; the chosen port is printed.")
@_with_sampling_options
def serve(manifest_path, host, port, tile_size, mpp, foreground_threshold,
          hsv_filter, hed_sigma, batch_size, seed):
    """Serve tile batches over the streaming protocol."""
    manifest = load_manifest(manifest_path)
    config = _stream_config(tile_size, mpp, foreground_threshold, hsv_filter,
                            hed_sigma, batch_size, seed)

    def announce(bound_port):
        click.echo(f"LISTENING {bound_port}", nl=True)
        sys.stdout.flush()

    server_mod.serve(manifest, config, host=host, port=port,
                     ready_callback=announce)


@main.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True))
@click.option("--n-tiles", required=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--shard-capacity", default=64, show_default=True, type=int)
@_with_sampling_options
def export(manifest_path, n_tiles, out_dir, shard_capacity, tile_size, mpp,
           foreground_threshold, hsv_filter, hed_sigma, batch_size, seed):
    """Export accepted, augmented tiles into shard files."""
    manifest = load_manifest(manifest_path)
    config = _stream_config(tile_size, mpp, foreground_threshold, hsv_filter,
                            hed_sigma, batch_size, seed)
    config = dataclasses.replace(config, shard_capacity=shard_capacity)
    index = export_shards(manifest, config, n_tiles, out_dir)
    click.echo(f"wrote {n_tiles} tiles, index at {index}")


@main.command("gen-synthetic")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--size", nargs=2, default=(2048, 2048), show_default=True,
              type=int, metavar="W H")
@click.option("--coverage", default=0.5, show_default=True, type=float)
@click.option("--mpp", default=0.25, show_default=True, type=float)
@click.option("--out", "out_path", required=True, type=click.Path())
def gen_synthetic(seed, size, coverage, mpp, out_path):
    """Write a deterministic synthetic slide package."""
    path = generate_synthetic_slide(seed, size[0], size[1], mpp, coverage,
                                    out_path)
    click.echo(f"wrote {path}")


def entrypoint():
    main(auto_envvar_prefix="PATHTILES")


if __name__ == "__main__":
    entrypoint()
