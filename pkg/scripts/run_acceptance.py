#!/usr/bin/env python3
"""Acceptance runner for orojar-lab.

Quick checks run by default; the GAN comparisons (VP ordering, deactivation,
layer ablation, lambda monotonicity) need --full and take hours on a desktop CPU.
"""

import argparse
import itertools
import logging
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.config import ExperimentConfig, PenaltyConfig, build_config  # noqa: E402
from src.data_factory import make_dataset  # noqa: E402
from src.discovery import discover  # noqa: E402
from src.metrics import evaluate  # noqa: E402
from src.nn import evaluating  # noqa: E402
from src.optim import Adam  # noqa: E402
from src.regularizers import all_rademacher, hessian_offdiag_probe, orojar_exact, orojar_stochastic  # noqa: E402
from src.sefa import factorize, verify_proposition  # noqa: E402
from src.synthetic import LinearGenerator, MLPGenerator, RotatedFactorGenerator, random_rotation  # noqa: E402
from src.tensor import Tensor, precision  # noqa: E402
from src.training import Trainer  # noqa: E402

logging.basicConfig(
    level=logging.WARNING,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


# ANSI color codes for better output
class Colors:
    GREEN = '\033[92m'
    RED = '\033[91m'
    BLUE = '\033[94m'
    RESET = '\033[0m'


def check_estimator_equivalence() -> Tuple[bool, str]:
    """Full Rademacher enumeration equals twice the exact penalty"""
    rng = np.random.default_rng(0)
    linear_worst, smooth_worst = 0.0, 0.0
    with precision("float64"):
        for _ in range(20):
            m = int(rng.integers(2, 7))
            g = LinearGenerator(rng.standard_normal((12, m)))
            z = Tensor(rng.standard_normal((4, m)))
            config = PenaltyConfig(layers=[1], epsilon=1.0)
            exact = orojar_exact(g, z, config)
            enumerated = orojar_stochastic(g, z, config, probes=all_rademacher(m), ddof=0).item()
            linear_worst = max(linear_worst, abs(enumerated - 2 * exact) / max(exact, 1e-300))

            smooth = MLPGenerator(m, 16, 10, rng)
            config = PenaltyConfig(layers=[2], epsilon=1e-3)
            exact = orojar_exact(smooth, z, config)
            enumerated = orojar_stochastic(smooth, z, config, probes=all_rademacher(m), ddof=0).item()
            smooth_worst = max(smooth_worst, abs(enumerated - 2 * exact) / max(exact, 1e-300))
    passed = linear_worst <= 1e-10 and smooth_worst <= 0.01
    return passed, f"linear rel err {linear_worst:.2e}, smooth rel err {smooth_worst:.2e}"


def check_sefa_proposition() -> Tuple[bool, str]:
    """Rotated first layers are equivalent and have diagonal Gram matrices"""
    rng = np.random.default_rng(1)
    worst_equiv, worst_offdiag = 0.0, 0.0
    for _ in range(50):
        m = int(rng.integers(2, 9))
        weight = rng.standard_normal((int(rng.integers(m, 64)), m))
        with precision("float64"):
            report = verify_proposition(LinearGenerator(weight), rng.standard_normal((100, m)), factorize(weight))
        worst_equiv = max(worst_equiv, report.equivalence_error)
        worst_offdiag = max(worst_offdiag, report.relative_offdiag)
    passed = worst_equiv < 1e-10 and worst_offdiag < 1e-8
    return passed, f"equivalence {worst_equiv:.2e}, relative off-diagonal {worst_offdiag:.2e}"


def mean_cross_term(g, z) -> float:
    pairs = itertools.combinations(range(g.latent_dim), 2)
    return float(np.mean([hessian_offdiag_probe(g, z, i, j, 1e-3) for i, j in pairs]))


def check_hessian_link() -> Tuple[bool, str]:
    """Reducing the Jacobian penalty 10x also shrinks Hessian cross terms"""
    rng = np.random.default_rng(2)
    with precision("float64"):
        g = MLPGenerator(3, 16, 12, rng)
        config = PenaltyConfig(layers=[2], epsilon=1e-3, k_samples=4)
        probe = Tensor(rng.standard_normal((64, 3)))
        exact_before = orojar_exact(g, probe, config)
        cross_before = mean_cross_term(g, probe)
        optimizer = Adam(g.named_parameters(), lr=1e-3, betas=(0.9, 0.999))
        exact_after = exact_before
        for step in range(20000):
            loss = orojar_stochastic(g, Tensor(rng.standard_normal((32, 3))), config, rng=rng)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if step % 200 == 199:
                exact_after = orojar_exact(g, probe, config)
                if exact_after <= exact_before / 10:
                    break
        cross_after = mean_cross_term(g, probe)
    passed = exact_after <= exact_before / 10 and cross_after <= cross_before / 2
    return passed, (f"penalty {exact_before:.3g} -> {exact_after:.3g}, "
                    f"cross term {cross_before:.3g} -> {cross_after:.3g}")


def check_direction_recovery() -> Tuple[bool, str]:
    """Discovered directions match a planted rotation in at least 2 of 3 seeds"""
    recovered = []
    for seed in range(3):
        rng = np.random.default_rng([4, seed])
        g = RotatedFactorGenerator(random_rotation(3, rng), [1.0, 2.0, 4.0])
        config = PenaltyConfig(layers=[1], epsilon=0.1, k_samples=4)
        result = discover(g, config, 1500, rng, lr=0.01)
        cosines = np.abs(result.A.T @ g.planted_directions)
        best = max(
            min(cosines[i, p] for i, p in enumerate(perm))
            for perm in itertools.permutations(range(3))
        )
        recovered.append(best > 0.9)
    return sum(recovered) >= 2, f"seeds recovered: {recovered}"


def tiny_experiment(seed: int, **penalty) -> ExperimentConfig:
    return build_config({
        "seed": seed,
        "model": {"latent_dim": 3, "resolution": 8, "base_channels": 8, "tap_count": 2},
        "data": {"resolution": 8, "count": 64},
        "penalty": {"layers": [1, 2], **penalty},
        "train": {"iters": 20, "batch_size": 8},
        "metrics": {"vp_pairs": 1000, "vp_epochs": 1, "vp_repeats": 1, "ppl_paths": 50, "probe_batch": 8},
    })


def check_determinism() -> Tuple[bool, str]:
    """Seeded runs give identical checkpoints and identical reports"""
    config = tiny_experiment(5)
    dataset = make_dataset(config.data.seed, config.data.count, config.data.resolution)
    runs = []
    for _ in range(2):
        trainer = Trainer(config, dataset)
        trainer.run(progress=False)
        report = evaluate(trainer.g, config.metrics, config.penalty, config.seed)
        runs.append((trainer.parameter_checksums(), report.to_dict()))
    same_weights = runs[0][0] == runs[1][0]
    same_report = runs[0][1] == runs[1][1]
    return same_weights and same_report, f"checkpoints equal: {same_weights}, reports equal: {same_report}"


def gan_run(seed: int, iters: int, **penalty) -> Dict:
    config = build_config({
        "seed": seed,
        "model": {"latent_dim": 6, "resolution": 32},
        "data": {"resolution": 32},
        "penalty": penalty,
        "train": {"iters": iters},
    })
    dataset = make_dataset(config.data.seed, config.data.count, config.data.resolution)
    trainer = Trainer(config, dataset)
    trainer.run(progress=True)
    return evaluate(trainer.g, config.metrics, config.penalty, config.seed).to_dict()


def has_deactivated_dimension(scores: List[float]) -> bool:
    return max(scores) > 0 and min(scores) / max(scores) < 0.1


def check_lambda_monotonicity(iters: int, seed: int = 0) -> Tuple[bool, str]:
    """Final exact penalty on 64 fixed latents does not grow with lambda (5% slack)"""
    values = []
    for lam in (0.0, 0.1, 1.0, 10.0):
        config = build_config({
            "seed": seed,
            "model": {"latent_dim": 6, "resolution": 32},
            "data": {"resolution": 32},
            "penalty": {"kind": "orojar", "lambda": lam},
            "train": {"iters": iters},
        })
        dataset = make_dataset(config.data.seed, config.data.count, config.data.resolution)
        trainer = Trainer(config, dataset)
        trainer.run(progress=True)
        z = np.random.default_rng([seed, 99]).standard_normal((64, config.model.latent_dim))
        with evaluating(trainer.g):
            values.append(orojar_exact(trainer.g, Tensor(z), config.penalty))
    ordered = all(later <= earlier * 1.05 for earlier, later in zip(values, values[1:]))
    return ordered, "exact penalty for lambda 0, 0.1, 1, 10: " + ", ".join(f"{v:.4g}" for v in values)


def check_gan_comparisons(iters: int) -> List[Tuple[str, bool, str]]:
    """VP ordering, deactivation and layer ablation over three seeds"""
    vp_wins, deactivated, baseline_deactivated, ablation_wins = [], [], [], []
    for seed in range(3):
        baseline = gan_run(seed, iters, kind="none")
        regularized = gan_run(seed, iters, kind="orojar", **{"lambda": 10.0})
        last_layer = gan_run(seed, iters, kind="orojar", layers=[4], **{"lambda": 10.0})
        vp_wins.append(regularized["vp_accuracy"] >= baseline["vp_accuracy"] + 0.08)
        deactivated.append(has_deactivated_dimension(regularized["activeness"]))
        baseline_deactivated.append(has_deactivated_dimension(baseline["activeness"]))
        ablation_wins.append(regularized["vp_accuracy"] >= last_layer["vp_accuracy"])
    return [
        ("VP ordering", sum(vp_wins) >= 2, f"seeds with +8 points: {vp_wins}"),
        ("Deactivation", sum(deactivated) >= 2 and sum(baseline_deactivated) <= 1,
         f"seeds with a deactivated dimension: regularized {deactivated}, baseline {baseline_deactivated}"),
        ("Layer ablation", sum(ablation_wins) >= 2, f"seeds where all layers beat the last: {ablation_wins}"),
    ]


QUICK_CHECKS: List[Tuple[str, Callable[[], Tuple[bool, str]]]] = [
    ("Estimator equivalence", check_estimator_equivalence),
    ("SeFa proposition", check_sefa_proposition),
    ("Hessian link", check_hessian_link),
    ("Direction recovery", check_direction_recovery),
    ("Determinism", check_determinism),
]


def report(name: str, passed: bool, detail: str, elapsed: float) -> None:
    mark = f"{Colors.GREEN}✅" if passed else f"{Colors.RED}❌"
    print(f"{mark} {name}{Colors.RESET} ({elapsed:.1f}s): {detail}")


def main() -> int:
    parser = argparse.ArgumentParser(description="orojar-lab acceptance checks")
    parser.add_argument("--full", action="store_true", help="Also run the multi-hour GAN comparisons")
    parser.add_argument("--iters", type=int, default=30000, help="Training iterations per GAN run")
    args = parser.parse_args()

    print(f"{Colors.BLUE}Running orojar-lab acceptance checks...{Colors.RESET}")
    results = []
    for name, check in QUICK_CHECKS:
        start = time.perf_counter()
        try:
            passed, detail = check()
        except Exception as e:
            logger.error(f"{name} raised: {e}", exc_info=True)
            passed, detail = False, f"error: {e}"
        report(name, passed, detail, time.perf_counter() - start)
        results.append(passed)

    if args.full:
        start = time.perf_counter()
        for name, passed, detail in check_gan_comparisons(args.iters):
            report(name, passed, detail, time.perf_counter() - start)
            results.append(passed)
        start = time.perf_counter()
        passed, detail = check_lambda_monotonicity(args.iters)
        report("Lambda monotonicity", passed, detail, time.perf_counter() - start)
        results.append(passed)

    if all(results):
        print(f"\n{Colors.GREEN}All checks passed!{Colors.RESET}")
        return 0
    print(f"\n{Colors.RED}Some checks failed!{Colors.RESET}")
    return 1


if __name__ == "__main__":
    sys.exit(main())
