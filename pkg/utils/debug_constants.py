#!/usr/bin/env python3
"""
Smoke check for the numerical building blocks

This script checks that the scientific stack is importable and prints the
kernel and normal-functional constants the test relies on, next to their
known values, before running a long campaign.

Usage:
    python utils/debug_constants.py
"""

import math
import sys
from pathlib import Path

# Add parent directory to path so we can import config
parent_dir = Path(__file__).parent.parent
sys.path.insert(0, str(parent_dir))

try:
    from config import MC_CONFIG, TEST_CONFIG
except ImportError:
    print("❌ Configuration file 'config.py' is required but not found.")
    sys.exit(1)


def check_dependencies():
    """Check if all required dependencies are available"""
    print("🔍 Checking dependencies...")
    ok = True
    for module in ("numpy", "scipy", "pandas", "dotenv"):
        try:
            __import__(module)
            print(f"✅ {module} is installed")
        except ImportError:
            print(f"❌ {module} not found. Install with: pip install -r requirements.txt")
            ok = False
    return ok


def show(label, value, expected=None, tol=None):
    line = f"   {label:<38} {value: .12f}"
    if expected is not None:
        flag = "✅" if abs(value - expected) <= tol else "❌"
        line += f"   expected {expected: .12f} {flag}"
    print(line)
    return expected is None or abs(value - expected) <= tol


def check_kernel():
    print("\n🧪 Kernel constants")
    from kernel_core import get_kernel

    kernel = get_kernel(TEST_CONFIG["kernel"], 1)
    results = [
        show("K(0)", kernel.eval([0.0]), 1.5, 1e-15),
        show("int K^2", kernel.int_K2(), 1.2, 1e-12),
        show("t(0)", kernel.overlap_t([0.0]), 1.0, 1e-12),
        show("t(1)", kernel.overlap_t([1.0]), 0.0, 0.0),
    ]
    kernel2 = get_kernel(TEST_CONFIG["kernel"], 2)
    results.append(show("int K^2 (d=2)", kernel2.int_K2(), 1.44, 1e-12))
    return all(results)


def check_normal_functionals():
    print("\n🧪 Normal functionals")
    from kernel_core import get_kernel
    from normal_functionals import LambdaSpec, McSettings, cov_lambda_pair, mean_lambda, q_constant

    mc = McSettings(draws=MC_CONFIG["draws"], seed=MC_CONFIG["seed"])
    one, two = LambdaSpec(1.0), LambdaSpec(2.0)
    results = [
        show("E max(Z,0)", mean_lambda(one), 1.0 / math.sqrt(2.0 * math.pi), 1e-12),
        show("E max(Z,0)^2", mean_lambda(two), 0.5, 1e-12),
        show("c_1(1)", cov_lambda_pair(one, 1.0), (math.pi - 1.0) / (2.0 * math.pi), 1e-12),
        show("c_2(1)", cov_lambda_pair(two, 1.0, mc), 1.25, 1e-12),
        show("c_2(-1)", cov_lambda_pair(two, -1.0, mc), -0.25, 1e-12),
        show("c_2(0.5) (Monte Carlo)", cov_lambda_pair(two, 0.5, mc)),
    ]
    kernel = get_kernel(TEST_CONFIG["kernel"], 1)
    show("q_1", q_constant(one, kernel))
    show("q_2 (Monte Carlo)", q_constant(two, kernel, mc=mc))
    show("q-bar_1", q_constant(LambdaSpec(1.0, "two_sided"), kernel))
    return all(results)


def main():
    print("🚀 L_p test constants check")
    print("=" * 50)
    if not check_dependencies():
        sys.exit(1)
    ok = all([check_kernel(), check_normal_functionals()])
    print("\n✅ All constants match" if ok else "\n❌ Some constants are off")
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
