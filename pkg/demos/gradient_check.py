"""Check every backward rule against central finite differences.

The sweep builds each primitive and each composite block in 64-bit
precision, perturbs a subsample of the inputs by a small step, and
compares the measured slope against the taped gradient. Positions too
close to a non-differentiable point (the ReLU kink) are skipped rather
than fudged.
"""

from mwdcnn.gradcheck import run_standard_suite


def main():
    report = run_standard_suite(seed=0, tolerance=1e-5)
    for line in report.lines():
        print(line)


if __name__ == "__main__":
    main()
