"""Artifact writers shared by the command-line front end.

Primary artifacts (manifest, summaries, tables) are byte-deterministic for a
fixed config and seed: keys are sorted, floats are serialized with ``repr``
(shortest round-trip form), and nothing time- or host-dependent is included.
Wall-clock measurements go into a separate ``timing.json`` sidecar that is
exempt from determinism comparisons.
"""

from __future__ import annotations

import json
import os

from . import __version__


def version_string():
    """Fixed, git-describe-style version tag for manifests."""
    return f"v{__version__}"


def _normalize(obj):
    """JSON-safe copy with floats via repr (exact round-trip, stable bytes)."""
    if isinstance(obj, float):
        return repr(obj)
    if isinstance(obj, dict):
        return {str(k): _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    if hasattr(obj, "item") and not hasattr(obj, "__len__"):  # numpy scalar
        return _normalize(obj.item())
    if hasattr(obj, "tolist"):  # numpy array
        return _normalize(obj.tolist())
    return obj


def write_json(path, payload):
    text = json.dumps(_normalize(payload), sort_keys=True, indent=2) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def write_manifest(outdir, subcommand, config, seed):
    """Config echo + seed + version; written before any work starts.

    The worker count is deliberately not echoed: the same config and seed
    must produce byte-identical artifacts whatever the degree of
    parallelism, and workers are execution machinery, not experiment
    parameters.
    """
    payload = {
        "version": version_string(),
        "subcommand": str(subcommand),
        "seed": int(seed),
        "config": {str(k): _normalize(v) for k, v in sorted(config.items())},
    }
    return write_json(os.path.join(outdir, "manifest.json"), payload)


def write_timing(outdir, seconds_by_stage):
    """Wall-clock sidecar; the one artifact allowed to differ run to run."""
    payload = {str(k): float(v) for k, v in sorted(seconds_by_stage.items())}
    return write_json(os.path.join(outdir, "timing.json"), payload)


def write_rows_csv(path, header, rows, comment=None):
    """Small deterministic CSV writer: repr floats, LF endings."""
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append(",".join(header))
    for row in rows:
        cells = [repr(c) if isinstance(c, float) else str(c) for c in row]
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
