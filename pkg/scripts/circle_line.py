"""Two-variable problem showing a constraint activate, hold and be dropped.

    python scripts/circle_line.py

Minimizes |x - c|^2 / 2 with c = (3, 3.2) subject to |x|^2 <= 9 and
x1 + x2 <= 3.5, starting from (0, 2.9). Prints one line per iterate: the
point, both constraint values, the step and any dropped constraint.
"""

import numpy as np

from meshguard.experiments import brute_force_minimizer, circle_line_problem, run_circle_line


def main():
    problem = circle_line_problem()
    fs = problem.constraints.functions
    print(f"{'n':>3} {'x1':>12} {'x2':>12} {'g1':>11} {'g2':>11} {'t':>10}  dropped")

    def show(n, x, rec):
        t = "" if rec["t"] is None else f"{rec['t']:.3e}"
        dropped = ",".join(f"g{k + 1}" for k in rec.get("dropped_rows", []))
        print(f"{n:>3} {x[0]:>12.8f} {x[1]:>12.8f} {fs[0](x):>11.3e} {fs[1](x):>11.3e} {t:>10}  {dropped}")

    result = run_circle_line(callback=show)
    ref = brute_force_minimizer(problem)
    print(f"stop: {result.reason}; brute-force minimizer {ref}, distance {np.linalg.norm(result.x - ref):.2e}")


if __name__ == "__main__":
    main()
