"""Recover a two-class mixture with the de-mixed estimator.

Senders choose among their friends and friends-of-friends with probability
0.75 and among everyone else otherwise. Because the classes have disjoint
alternatives, the class weight and each class's logit are fitted
separately.

Run with ``python demos/demixed_two_mode.py``.
"""

from relchoice import ModePartition, fit_demixed
from relchoice.synth import THETA_LOCAL, THETA_REST, GeneratorConfig, generate


def main(seed: int = 11):
    config = GeneratorConfig(n_nodes=1000, n_seed=2000, n_events=6000,
                             kind="two_mode", seed=seed)
    run = generate(config)
    partition = ModePartition.local_rest()
    result = fit_demixed(partition, run.state, run.events, seed=seed)
    print(result.table())
    print()
    print("true local theta:", THETA_LOCAL)
    print("true rest theta (in-event count terms):", (THETA_REST[0], THETA_REST[4]))
    print("true pi_local:", config.pi_local)


if __name__ == "__main__":
    main()
