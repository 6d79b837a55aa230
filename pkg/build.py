"""
Build script for creating the BranchLab command-line executable.
Uses PyInstaller to create a standalone one-file console program.

Usage:
    python build.py

The example run configs in src/data/scenarios are bundled with the executable.
"""

import os
import sys
import subprocess
from pathlib import Path

# Import version from src package
try:
    from src import __version__
    VERSION = __version__
except ImportError:
    VERSION = "1.0.0"  # Fallback version


def find_pyinstaller(root_dir: Path) -> list:
    """PyInstaller from the project virtual environment, else the current interpreter."""
    for candidate in (
        root_dir / 'venv' / 'Scripts' / 'pyinstaller.exe',
        root_dir / 'venv' / 'bin' / 'pyinstaller',
    ):
        if candidate.exists():
            return [str(candidate)]
    return [sys.executable, '-m', 'PyInstaller']


def build_exe():
    """Build the executable using PyInstaller."""

    # Get the root directory
    root_dir = Path(__file__).parent
    scenarios = root_dir / 'src' / 'data' / 'scenarios'
    if not any(scenarios.glob('*.json')):
        print(f"[ERROR] No scenario configs found in {scenarios}")
        sys.exit(1)
    print(f"[OK] Bundling {len(list(scenarios.glob('*.json')))} scenario configs")

    exe_name = f'BranchLab-{VERSION}'

    options = find_pyinstaller(root_dir) + [
        f'--name={exe_name}',
        '--onefile',
        '--console',
        '--noconfirm',  # Overwrite without asking
        f'--add-data={scenarios}{os.pathsep}src/data/scenarios',
        # POT and SciPy load compiled submodules lazily
        '--collect-submodules=ot',
        '--hidden-import=scipy.optimize._highs',
        '--hidden-import=scipy.special',
        str(root_dir / 'src' / 'main.py'),
    ]

    print("Building executable...")
    print(f"Command: {' '.join(options)}")

    try:
        subprocess.run(options, check=True)
        print("\n[SUCCESS] Build successful!")
        suffix = '.exe' if os.name == 'nt' else ''
        print(f"Executable location: {root_dir / 'dist' / f'{exe_name}{suffix}'}")
        print("")
        print("Try it with:")
        print(f"  {exe_name} check --config src/data/scenarios/constant.json --out output/constant")
    except subprocess.CalledProcessError as e:
        print(f"\n[ERROR] Build failed with error: {e}")
        sys.exit(1)


if __name__ == '__main__':
    build_exe()
