"""Sharded EMA experiments: worker-count equivalence and FP32 convergence error.

    python3 scripts/ema_sweep.py --params 100003 --steps 200
"""

import argparse
import sys
import time

from editmask.emasim import EmaConfig, convergence_check, fp32_rounding_bound, memory_report, partition, simulate


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--params", type=int, default=100_003)
    parser.add_argument("--steps", type=int, default=100)
    parser.add_argument("--workers", default="1,2,3,4,7,8,16,64")
    parser.add_argument("--decays", default="0.5,0.8,0.9,0.99,0.999,0.9999")
    parser.add_argument("--horizon", type=int, default=1000, help="steps for the convergence check")
    args = parser.parse_args()

    print("worker-count equivalence (decay 0.999)")
    ok = True
    for n in (int(w) for w in args.workers.split(",")):
        t0 = time.perf_counter()
        res = simulate(args.params, n, EmaConfig(0.999, steps=args.steps), trajectory_seed=1)
        ok &= res.bitwise_equal
        print(f"  N={n:<4} bitwise_equal={res.bitwise_equal}  "
              f"max shard {max(res.compute.elements_per_step)}  {time.perf_counter() - t0:.2f}s")

    print(f"\nconstant-target error over {args.horizon} steps")
    print(f"  {'decay':>7} {'max rel err':>12} {'at step':>8} {'fp32 bound':>11}")
    for decay in (float(d) for d in args.decays.split(",")):
        check = convergence_check(4096, decay, args.horizon, seed=3)
        bound = fp32_rounding_bound(decay, args.horizon)
        ok &= check["max_rel_error"] <= bound
        print(f"  {decay:>7} {check['max_rel_error']:>12.3e} {check['worst_step']:>8} {bound:>11.3e}")

    print("\nmemory accounting, 20e9 FP32 params")
    for n in (1, 2, 4, 8, 16, 64):
        mem = memory_report(partition(20 * 10**9, n))
        print(f"  N={n:<3} {mem.max_per_worker_bytes:>12} B/worker = "
              f"{mem.per_worker_gb:7.3f} GB = {mem.per_worker_gib:7.3f} GiB")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
