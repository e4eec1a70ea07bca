"""Measurement throughput of the compiled kernels against the Python fallback.

    python benchmarks/bench_kernels.py [--programs 20] [--samples 50]

Each backend runs in its own interpreter because the switch is read at
import time.  Prints measurements per second for both and the ratio.
"""
import argparse
import json
import os
import subprocess
import sys
import time
import warnings


def run(programs: int, samples: int, scenario: str) -> dict:
    from isofuzz import _jit, corpus
    from isofuzz.executor import measure_sample, setup_environment
    from isofuzz.generator import generate_inputs, generate_program
    from isofuzz.package import package_from
    from isofuzz.template import parse_template

    warnings.simplefilter("ignore")
    s = corpus.scenario(scenario)
    tmpl = parse_template(s.template)
    # warm-up compiles (or loads the cache) outside the timed region
    prog = generate_program(tmpl, s.config, 0)
    inputs = generate_inputs(s.config, 1, 2, 0)
    measure_sample(setup_environment(package_from(prog, s.config, inputs), s.config),
                   inputs[0], 2)

    n = 0
    elapsed = 0.0
    for seed in range(programs):
        prog = generate_program(tmpl, s.config, seed)
        inputs = generate_inputs(s.config, 2, 5, seed)
        ctx = setup_environment(package_from(prog, s.config, inputs), s.config, seed)
        t = time.perf_counter()
        for inp in inputs:
            measure_sample(ctx, inp, samples)
            n += samples
        elapsed += time.perf_counter() - t
    return {"backend": _jit.backend_name(), "measurements": n, "seconds": elapsed,
            "rate": n / elapsed}


def spawn(no_jit: bool, args) -> dict:
    env = dict(os.environ)
    env.pop("ISOFUZZ_NO_JIT", None)
    if no_jit:
        env["ISOFUZZ_NO_JIT"] = "1"
    cmd = [sys.executable, __file__, "--child", "--programs", str(args.programs),
           "--samples", str(args.samples), "--scenario", args.scenario]
    out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--programs", type=int, default=20)
    p.add_argument("--samples", type=int, default=50, help="measurements per input")
    p.add_argument("--scenario", default="k2u-mem-u-bit")
    p.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = p.parse_args()
    if args.child:
        print(json.dumps(run(args.programs, args.samples, args.scenario)))
        return
    fast, slow = spawn(False, args), spawn(True, args)
    for r in (fast, slow):
        print(f"{r['backend']:7s} {r['measurements']:7d} measurements "
              f"{r['seconds']:8.2f}s {r['rate']:10.0f}/s")
    print(f"speedup {fast['rate'] / slow['rate']:.1f}x")


if __name__ == "__main__":
    main()
