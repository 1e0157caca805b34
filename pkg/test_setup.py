#!/usr/bin/env python3
"""
Quick test script to verify the cdebench setup.
Run this after installing the package to ensure the numerical stack works.
"""

import sys
from pathlib import Path

# Add project root to path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))


def test_configuration():
    """Test that configuration loads properly."""
    print("🔧 Testing configuration...")
    try:
        from app.core.config import settings
        print("✅ Configuration loaded successfully")
        print(f"   App Name: {settings.app_name}")
        print(f"   Version: {settings.app_version}")
        print(f"   Quadrature points: {settings.quadrature_points}")
        if settings.bench_threads is not None:
            print(f"   CDE_BENCH_THREADS override: {settings.bench_threads}")
        return True
    except Exception as e:
        print(f"❌ Configuration test failed: {e}")
        return False


def test_simulator():
    """Test that a simulator samples and its conditional integrates to one."""
    print("\n🎲 Testing simulators...")
    try:
        from app.services.gmm import integrate_1d
        from app.services.simulators import build_simulator

        sim = build_simulator("econ")
        data = sim.sample_joint(200, 0)
        lo, hi = sim.conditional_support([1.0])
        mass = integrate_1d(lambda y: sim.conditional_pdf([1.0], y), lo[0], hi[0])
        print(f"   Sampled {len(data)} rows; conditional mass {mass:.8f}")
        ok = abs(mass - 1.0) < 1e-6
        print("✅ Simulator works" if ok else "❌ Conditional density does not integrate to one")
        return ok
    except Exception as e:
        print(f"❌ Simulator test failed: {e}")
        return False


def test_estimator():
    """Test a short MDN fit and a density query."""
    print("\n🧠 Testing a short MDN fit...")
    try:
        from app.models.configs import MdnConfig
        from app.services.neural_cde import MixtureDensityNetwork
        from app.services.simulators import build_simulator

        data = build_simulator("econ").sample_joint(400, 1)
        est = MixtureDensityNetwork(MdnConfig(epochs=20, n_components=5)).fit(data)
        print(f"   Final epoch loss: {est.loss_history[-1]:.4f}")
        print(f"   p(y=1 | x=1) = {float(est.pdf([1.0], 1.0)):.4f}")
        print("✅ MDN fitted successfully")
        return True
    except Exception as e:
        print(f"❌ Estimator test failed: {e}")
        return False


def test_server():
    """Test that the HTTP app builds."""
    print("\n📡 Testing the model-serving app...")
    try:
        from app.server import create_app
        from app.services.registry import build_oracle

        create_app(build_oracle("econ"))
        print("✅ Serving app created successfully")
        return True
    except Exception as e:
        print(f"❌ Server test failed: {e}")
        return False


def main():
    """Run all tests."""
    print("=" * 60)
    print("📈 CDEBENCH - SETUP VERIFICATION TESTS")
    print("=" * 60)

    results = [test_configuration(), test_simulator()]

    # Only fit if the basics work
    if all(results):
        results.append(test_estimator())

    results.append(test_server())

    # Summary
    print("\n" + "=" * 60)
    print("📊 TEST SUMMARY")
    print("=" * 60)
    passed = sum(results)
    total = len(results)

    print(f"Tests Passed: {passed}/{total}")

    if passed == total:
        print("✅ All tests passed! cdebench is ready to use.")
        print("\n🚀 Next steps:")
        print("   1. Simulate data: python main.py simulate --sim econ --n 1600 --out econ.csv")
        print("   2. Fit a model:   python main.py fit --estimator mdn --data econ.csv --model-out mdn.json")
        print("   3. Evaluate it:   python main.py eval --model mdn.json --sim econ")
        print("   4. Run the tests: pytest")
    else:
        print("❌ Some tests failed. Please check the errors above.")
        print("\n🔍 Common issues:")
        print("   - Dependencies not installed (run: pip install -e '.[dev]')")
        print("   - Python version < 3.11")

    print("=" * 60)

    return 0 if passed == total else 1


if __name__ == "__main__":
    sys.exit(main())
