"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times each kernel on training-sized arrays (a 400-300 network, batch 128)
and one full agent update per backend. Each backend runs in its own
interpreter so the import-time selection is exercised as in normal use.
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, timeit
import numpy as np
from drlcontrol._alloc import tune_malloc
tune_malloc()
from drlcontrol import kernels
from drlcontrol.agent import AgentConfig, DdpgAgent

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
n_params = 400 * 5 + 400 + 300 * 400 + 300 + 300 + 1 + 4 * 700
p = rng.standard_normal(n_params); g = rng.standard_normal(n_params)
m = np.zeros(n_params); v = np.zeros(n_params); tgt = p.copy()
z = rng.standard_normal((128, 400)); gamma = np.ones(400); beta = np.zeros(400)
out, xhat, mean, var, inv = kernels.bn_forward_train(z, gamma, beta, 1e-5)
acts = rng.uniform(0, 100, (128, 1)); ag = rng.standard_normal((128, 1))
lo = np.array([0.0]); hi = np.array([100.0])

cases = {
    "adam_update": lambda: kernels.adam_update(p, g, m, v, 1e-4, 0.9, 0.999, 1e-8, 10),
    "soft_update": lambda: kernels.soft_update(tgt, p, 1e-3),
    "bn_forward_train": lambda: kernels.bn_forward_train(z, gamma, beta, 1e-5),
    "bn_backward": lambda: kernels.bn_backward(z, xhat, gamma, inv),
    "invert_gradients": lambda: kernels.invert_gradients(ag, acts, lo, hi),
}
res = {}
for name, fn in cases.items():
    n = 200
    res[name] = min(timeit.repeat(fn, number=n, repeat=repeat)) / n * 1e6

agent = DdpgAgent(2, AgentConfig(action_low=(0.0,), action_high=(100.0,), batch_size=128, capacity=5000),
                  rng=np.random.default_rng(1))
for _ in range(256):
    s = rng.standard_normal(2)
    agent.remember(s, rng.uniform(0, 100, 1), -abs(s[0]), rng.standard_normal(2))
agent.train_step()
res["train_step"] = min(timeit.repeat(agent.train_step, number=20, repeat=repeat)) / 20 * 1e6
print(json.dumps({"backend": kernels.BACKEND, "us": res}))
"""


def run_backend(pure, repeat):
    env = dict(os.environ)
    if pure:
        env["DRLCONTROL_PURE_PYTHON"] = "1"
    else:
        env.pop("DRLCONTROL_PURE_PYTHON", None)
    out = subprocess.run([sys.executable, "-c", CHILD, str(repeat)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    fast = run_backend(False, args.repeat)
    slow = run_backend(True, args.repeat)
    if fast["backend"] != "cython":
        print("compiled extension not available; both columns use the numpy fallback")
    print(f"{'kernel':<18}{fast['backend'] + ' (us)':>16}{'python (us)':>16}{'speedup':>10}")
    for name in slow["us"]:
        a, b = fast["us"][name], slow["us"][name]
        print(f"{name:<18}{a:>16.1f}{b:>16.1f}{b / a:>10.2f}")


if __name__ == "__main__":
    main()
