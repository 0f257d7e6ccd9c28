"""
Master test script - runs every test suite in turn.

Suites:
- Configuration and data models
- Blocks, networks and losses
- Data synthesis and real pairs
- Metrics, training and the command line
"""

import subprocess
import sys
from pathlib import Path

TESTS_DIR = Path(__file__).parent
ROOT = TESTS_DIR.parent

SUITES = {
    "Config & Data Models": "test_models.py",
    "Dual-Stream Blocks": "test_blocks.py",
    "Networks & Backbone": "test_model.py",
    "Losses": "test_losses.py",
    "Data Synthesis & Pairs": "test_data.py",
    "Metrics & Evaluation": "test_metrics.py",
    "Training & Checkpoints": "test_train.py",
    "Command Line": "test_cli.py",
}


def run_suite(name: str, filename: str) -> bool:
    """Run one suite file under pytest and report the outcome."""
    print("\n" + "="*80)
    print(f"SUITE: {name}")
    print("="*80)

    try:
        result = subprocess.run(
            [sys.executable, "-m", "pytest", str(TESTS_DIR / filename), "-q"],
            capture_output=True,
            text=True,
            cwd=ROOT,
            timeout=1800
        )

        print(result.stdout)

        if result.returncode == 0:
            print(f"✅ {name} PASSED")
            return True
        else:
            print(f"❌ {name} FAILED")
            print(result.stderr)
            return False

    except Exception as e:
        print(f"❌ Error running {name}: {e}")
        return False


def main():
    """Run all suites."""
    print("\n" + "="*80)
    print("DSRNET - COMPLETE TEST SUITE")
    print("="*80)
    print("\nSlow acceptance runs are skipped unless DSRNET_RUN_SLOW=1 is set.")

    results = {name: run_suite(name, filename) for name, filename in SUITES.items()}

    # Summary
    print("\n" + "="*80)
    print("TEST RESULTS SUMMARY")
    print("="*80)

    passed = sum(results.values())
    for test_name, result in results.items():
        status = "✅ PASSED" if result else "❌ FAILED"
        print(f"{test_name:.<40} {status}")

    print("="*80)
    print(f"Overall: {passed}/{len(results)} test suites passed")

    if passed == len(results):
        print("\n🎉 ALL TESTS PASSED!")
    else:
        print("\n⚠️  Some tests failed. Review errors above.")
        print("   Dependencies installed? pip install -r requirements.txt")

    print("="*80 + "\n")
    return 0 if passed == len(results) else 1


if __name__ == "__main__":
    sys.exit(main())
