"""Path utilities for experiment output naming."""

import re
from pathlib import Path
from typing import Any, Dict

DEFAULT_PATTERN = "{base}/{kind}_{name}_seed{seed}"


def sanitize_filename(filename: str) -> str:
    """
    Sanitize a name to be safe for filesystem use.

    Args:
        filename: Original name

    Returns:
        Sanitized name
    """
    filename = re.sub(r'[<>:"/\\|?*=,;\s]', '_', filename)
    filename = re.sub(r'_+', '_', filename)
    filename = filename.strip('._ ')
    if not filename:
        filename = "untitled"
    return filename


def generate_output_dir(
    base: Path,
    kind: str,
    name: str,
    seed: int,
    pattern: str = DEFAULT_PATTERN
) -> Path:
    """
    Build the output directory of an experiment and create it.

    Pattern placeholders:
        {base} - Base output directory
        {kind} - Experiment kind
        {name} - Experiment name
        {seed} - Master seed
    """
    subs: Dict[str, Any] = {
        'base': str(base),
        'kind': sanitize_filename(kind),
        'name': sanitize_filename(name),
        'seed': int(seed)
    }
    output_dir = Path(pattern.format(**subs))
    output_dir.mkdir(parents=True, exist_ok=True)
    return output_dir
