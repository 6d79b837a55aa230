# Example run configs for BranchLab
from pathlib import Path

SCENARIO_DIR = Path(__file__).parent / "scenarios"


def scenario_config_path(name: str) -> Path:
    """Path of a bundled example config, e.g. 'binary_branching'."""
    path = SCENARIO_DIR / f"{name}.json"
    if not path.exists():
        available = sorted(p.stem for p in SCENARIO_DIR.glob("*.json"))
        raise FileNotFoundError(f"No bundled config '{name}'. Available: {available}")
    return path
