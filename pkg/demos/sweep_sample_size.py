"""Small experiment sweep over the number of observed choices.

Runs a reduced copy of ``plans/vary_n.json`` and prints the mean and mean
squared error of the reciprocity coefficient per sampling policy and n.

Run with ``python demos/sweep_sample_size.py``.
"""

from relchoice import ExperimentPlan, run_plan, summarize


def main():
    plan = ExperimentPlan.from_dict({
        "name": "demo_vary_n",
        "kind": "clogit",
        "generator": {"n_nodes": 1000, "n_seed": 2000, "n_events": 4000},
        "n": [500, 1000, 4000],
        "s": [24],
        "policies": ["uniform", "stratified"],
        "replicates": 3,
        "seed": 17,
    })
    rows = run_plan(plan, workers=1)
    target = "log_reverse_pair_count"
    print(f"{'policy':<12}{'n':>8}{'mean':>10}{'mse':>10}")
    for r in summarize(rows):
        if r.coef == target:
            print(f"{r.policy:<12}{r.grid_n:>8}{r.mean:>10.3f}{r.mse:>10.4f}")


if __name__ == "__main__":
    main()
