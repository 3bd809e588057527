"""How the severing bar trades false cuts against missed attackers.

The threshold is the score mean plus beta sample standard deviations. A low
bar severs eagerly (including honest links), a high bar never fires at all;
the sweep shows final error, cuts, and isolation rate across beta under
common random numbers, so every arm sees identical graphs and data.
"""

from robustpush import (
    AttackSpec,
    ExperimentConfig,
    ExperimentSpec,
    GraphSpec,
    InstanceSpec,
    ProtocolConfig,
    SweepSpec,
    run_sweep,
)


def main() -> None:
    cfg = ExperimentConfig(
        experiment=ExperimentSpec(trials=8, base_seed=0),
        graph=GraphSpec(n=20, malicious=(17, 18, 19)),
        instance=InstanceSpec(d=2, x_o=(0.0859, -1.4916)),
        attack=AttackSpec(kind="mean_shift", shift=5.0),
        protocol=ProtocolConfig(T=2000),
        sweep=SweepSpec(parameter="protocol.beta", grid=(0.2, 0.8, 1.5, 3.0, 5.0, 10.0)),
    )
    result = run_sweep(cfg, parallel=2)

    print(f"{'beta':>6}  {'epsilon':>9}  {'severed':>8}  {'false':>6}  "
          f"{'isolated':>9}  {'ok':>3}")
    for value, campaign in zip(result.values, result.campaigns):
        a = campaign.aggregate
        print(
            f"{value:>6.1f}  {a['epsilon_mean']:>9.4f}  "
            f"{a['severed_total_mean']:>8.1f}  {a['false_severs_mean']:>6.1f}  "
            f"{a['isolated_fraction']:>9.2f}  {int(a['trials_ok']):>3}"
        )
    print("\nlow bars cut everything including honest links; high bars never")
    print("fire, so the error saturates at the no-detection level")


if __name__ == "__main__":
    main()
