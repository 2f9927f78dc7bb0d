"""Shared test fixtures: the experiment cache and the acceptance report.

Desk-scale artifacts (labelled datasets, trained models) are cached under
``.cache/`` at the repository root, keyed by their full configuration, so
a warm test run takes minutes while a cold run rebuilds everything.

Acceptance tests register one PASS/FAIL line per criterion through
``record_acceptance``; the lines are printed in the terminal summary.
"""

import hashlib
import json
from pathlib import Path

CACHE_DIR = Path(__file__).resolve().parent.parent / ".cache"

_ACCEPTANCE_RESULTS = []


def record_acceptance(name, passed, detail=""):
    """Register (and return) an acceptance-criterion outcome."""
    _ACCEPTANCE_RESULTS.append((name, bool(passed), detail))
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(_ACCEPTANCE_RESULTS):
        verdict = "PASS" if passed else "FAIL"
        suffix = f"  ({detail})" if detail else ""
        terminalreporter.write_line(f"{name}: {verdict}{suffix}")


def _config_key(config):
    payload = json.dumps(
        {k: (list(v) if isinstance(v, (tuple, list)) else v)
         for k, v in sorted(vars(config).items())},
        sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def cached_dataset(config):
    """Build (or load) the dataset for ``config``, cached on disk."""
    from mdbeam import channel

    CACHE_DIR.mkdir(exist_ok=True)
    path = CACHE_DIR / f"ds_{_config_key(config)}.bnnd"
    if path.exists():
        return channel.load_dataset(path)
    ds = channel.build_dataset(config)
    channel.save_dataset(ds, path)
    return ds


def cached_pipeline(name, builder):
    """Load pipeline ``name`` from the cache or build and store it."""
    from mdbeam import compress

    CACHE_DIR.mkdir(exist_ok=True)
    path = CACHE_DIR / f"{name}.bnn"
    if path.exists():
        return compress.load_pipeline(path)
    pipe = builder()
    compress.save_pipeline(pipe, path)
    return pipe


def cached_array(name, builder):
    """Cache a dict of numpy arrays under ``name`` (npz)."""
    import numpy as np

    CACHE_DIR.mkdir(exist_ok=True)
    path = CACHE_DIR / f"{name}.npz"
    if path.exists():
        return dict(np.load(path))
    arrays = builder()
    np.savez(path, **arrays)
    return arrays
