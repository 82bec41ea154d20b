#!/usr/bin/env python3

import subprocess
import sys


def run_command(command, description):
    print(f"Running: {description}")
    try:
        subprocess.run(command, check=True, capture_output=True, text=True)
        print(f"✓ {description} completed successfully")
        return True
    except subprocess.CalledProcessError as e:
        print(f"✗ {description} failed: {e}")
        if e.stdout:
            print(f"stdout: {e.stdout}")
        if e.stderr:
            print(f"stderr: {e.stderr}")
        return False


def check_python_version():
    version = sys.version_info
    if version < (3, 8):
        print("✗ Python 3.8 or higher is required")
        return False
    print(f"✓ Python {version.major}.{version.minor}.{version.micro} is compatible")
    return True


def install_dependencies():
    return run_command([sys.executable, "-m", "pip", "install", "-r", "requirements.txt"], "Installing dependencies")


def run_tests():
    return run_command([sys.executable, "-m", "pytest", "-q", "-m", "not slow"], "Running unit tests")


def run_demo():
    return run_command([sys.executable, "process.py", "--quiet", "demo"], "Running the restaurant demo")


def main():
    print("Eventuality Query Toolkit Setup")
    print("=" * 50)

    if not check_python_version():
        sys.exit(1)

    if not install_dependencies():
        print("Failed to install dependencies. Please check your Python environment.")
        sys.exit(1)

    print("\nRunning tests...")
    if not run_tests():
        print("Some tests failed. Please check the output above.")
        return False

    if not run_demo():
        print("Demo failed. Please check the output above.")
        return False

    print("\n" + "=" * 50)
    print("✓ Setup completed successfully!")
    print("\nTry the pipeline:")
    print("  python process.py demo")
    print("  python process.py --config configs/desk.cfg sample --kg graph.tsv --out-dir data")
    print("  python process.py train --data-dir data --out data/model.ckpt")
    print("  python process.py eval --model data/model.ckpt --data-dir data")
    print("\nOr run checks:")
    print("  python test_solution.py")
    print("  python validate_schema.py data")

    return True


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
