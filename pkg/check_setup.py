#!/usr/bin/env python3
"""
Setup preflight for the RB spectral clustering toolkit.
Checks the interpreter, installed modules, thread settings and output locations
before long bench runs.

Usage:
    python check_setup.py
    python rbsc.py check
"""

import importlib.util
import os
import sys
import tempfile
from pathlib import Path

REQUIRED_MODULES = [
    'numpy',
    'scipy',
    'pandas',
    'sklearn',
    'loguru',
    'threadpoolctl',
    'dotenv',
]


class SetupValidator:
    def __init__(self, output_dir=None, data_dir=None):
        self.errors = []
        self.warnings = []
        self.output_dir = output_dir or os.getenv("RBSC_OUTPUT_DIR", "results")
        self.data_dir = data_dir or os.getenv("RBSC_DATA_DIR", "data")

    def check_python_version(self):
        """Check Python version is >= 3.11"""
        version = sys.version_info
        if version.major < 3 or (version.major == 3 and version.minor < 11):
            self.errors.append(
                f"Python 3.11+ required, found {version.major}.{version.minor}.{version.micro}"
            )
            return False
        return True

    def check_required_modules(self):
        """Check if required Python modules are installed"""
        missing = [m for m in REQUIRED_MODULES if importlib.util.find_spec(m) is None]
        if missing:
            self.errors.append(
                f"Missing required Python modules: {', '.join(missing)}"
            )
            self.errors.append(
                "Install with: pip install -r requirements.txt"
            )
            return False
        return True

    def check_thread_settings(self):
        """RBSC_NUM_THREADS and RBSC_BLAS_THREADS must be positive integers when set"""
        ok = True
        for name in ("RBSC_NUM_THREADS", "RBSC_BLAS_THREADS"):
            raw = os.getenv(name)
            if raw is None or raw.strip() == "":
                continue
            try:
                value = int(raw)
            except ValueError:
                self.errors.append(f"{name} must be an integer, got {raw!r}")
                ok = False
                continue
            if value < 1:
                self.errors.append(f"{name} must be >= 1, got {value}")
                ok = False
        blas = os.getenv("RBSC_BLAS_THREADS")
        if ok and blas and int(blas) > 1:
            self.warnings.append(
                f"RBSC_BLAS_THREADS={blas}: timings in bench runs will include BLAS threading"
            )
        return ok

    def check_output_dir(self):
        """Output directory exists (or can be created) and is writable"""
        path = Path(self.output_dir)
        try:
            path.mkdir(parents=True, exist_ok=True)
            with tempfile.NamedTemporaryFile(dir=path, prefix=".rbsc_probe_"):
                pass
        except OSError as e:
            self.errors.append(f"Output directory {path} is not writable: {e}")
            return False
        return True

    def check_data_dir(self):
        """Data directory is optional; synthetic datasets need none"""
        path = Path(self.data_dir)
        if not path.is_dir():
            self.warnings.append(
                f"Data directory not found: {path}"
            )
            self.warnings.append(
                "LIBSVM datasets must then be given by full path (synthetic data still works)"
            )
        return True

    def validate_all(self):
        """Run all validation checks"""
        checks = [
            ("Python version", self.check_python_version),
            ("Required Python modules", self.check_required_modules),
            ("Thread settings", self.check_thread_settings),
            ("Output directory", self.check_output_dir),
            ("Data directory", self.check_data_dir),
        ]

        print("Validating setup...\n")

        all_passed = True
        for name, check in checks:
            try:
                passed = check()
                status = "✓" if passed else "❌"
                print(f"{status} {name}")
                if not passed:
                    all_passed = False
            except Exception as e:
                print(f"❌ {name} (error: {e})")
                self.errors.append(f"{name} check failed: {e}")
                all_passed = False

        if self.warnings:
            print("\n⚠ Warnings:")
            for warning in self.warnings:
                print(f"  - {warning}")

        if self.errors:
            print("\n❌ Errors:")
            for error in self.errors:
                print(f"  - {error}")
            print("\nSetup validation failed")
            return False

        print("\n✓ Setup validated successfully")
        return all_passed


def main():
    """Main entry point for standalone execution"""
    validator = SetupValidator()
    success = validator.validate_all()
    sys.exit(0 if success else 1)


if __name__ == "__main__":
    main()
