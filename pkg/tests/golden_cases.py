"""Fixed row sets for the SVG golden files."""
import math

CASES = {
    "linear": dict(series=[("a", [0.0, 1.0, 2.0, 3.0], [0.0, 1.0, 4.0, 9.0]),
                           ("b", [0.0, 1.0, 2.0, 3.0], [9.0, 4.0, 1.0, 0.0])],
                   xlabel="x", ylabel="y"),
    "loglog_gap": dict(series=[("error", [0.5, 1.0, 2.0, 5.0, 10.0, 20.0], [0.8, 0.67, math.nan, 0.24, 0.12, 0.067]),
                               ("bound", [0.5, 20.0], [1.0, 0.05])],
                       xlabel="alpha", ylabel="error", logx=True, logy=True),
    "titled_point": dict(series=[("single <pt>", [2.0], [3.0]), ("empty", [], [])],
                         xlabel="q", ylabel="h & value", title="lam < 0"),
}
