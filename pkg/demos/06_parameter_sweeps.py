"""Sweeps over population sizes and edge-round counts, one comparison table
per point, with the straggler schedule regenerated to match each topology."""

from bhfl.harness import sweep_compare

BASE = {
    "seed": 17,
    "rounds": {"T": 30, "K": 2, "T_c": 2},
    "task": {"kind": "linear_regression", "input_dim": 8},
    "data": {"n_samples": 1500, "noise": 0.3, "weight_scale": 0.0, "n_groups": 25,
             "grouping": "conflict_pairs", "cluster_scale": 1.0, "spread": 0.4,
             "group_offset_scale": 4.0},
    "lr": {"eta0": 20.0, "decay": 0.005},
    "stragglers": {"kind": "temporary", "edge_count": 1, "device_count_per_edge": 1,
                   "identity": "rotating", "run_length": 3, "seed": 5},
}

AGGREGATORS = ["hieavg", "t_fedavg", "d_fedavg"]


def show(title, tables):
    print(f"\n== {title} ==")
    print(f"{'point':<32}" + "".join(f"{a:>12}" for a in AGGREGATORS))
    for label, table in tables.items():
        print(f"{label:<32}"
              + "".join(f"{table.final_loss(a):>12.4f}" for a in AGGREGATORS))


def main():
    print("final losses per sweep point (same schedule family, 30 rounds)")

    show("devices per edge (J)", sweep_compare(
        BASE,
        [{"topology": {"devices_per_edge": [j] * 5}, "data": {"n_groups": 5 * j}}
         for j in (3, 5, 8)],
        AGGREGATORS))

    show("edge servers (N)", sweep_compare(
        BASE,
        [{"topology": {"devices_per_edge": [5] * n}, "data": {"n_groups": 5 * n}}
         for n in (3, 5, 8)],
        AGGREGATORS))

    show("edge rounds per global round (K)", sweep_compare(
        BASE, [{"rounds": {"K": k}} for k in (1, 2, 4)], AGGREGATORS))

    show("straggler counts", sweep_compare(
        BASE,
        [{"stragglers": {"edge_count": e, "device_count_per_edge": d}}
         for e, d in ((0, 1), (1, 1), (2, 2))],
        AGGREGATORS))


if __name__ == "__main__":
    main()
