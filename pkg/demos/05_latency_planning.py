"""From channel physics to the cheapest feasible edge-round count.

A device's round time follows from its Shannon rate and CPU budget; the
per-round consensus time must fit inside the K-scaled waiting window, and
the global convergence bound caps how small K may get. The optimizer scans
integer K and reports the binding constraint.
"""

from bhfl.chain import consensus_latency
from bhfl.latency import (BoundParams, ChannelParams, LatencyProfile, optimize_edge_rounds,
                          transmission_rate, waiting_period)


def main():
    channel = ChannelParams(
        bandwidth_hz=1e6, transmit_power_w=0.2, channel_gain=1e-3,
        noise_power_w=1e-9,          # ~53 dB SNR
        model_bits=160_000,          # a 20 KB model update
        cpu_cycles_per_round=1.67e9, cpu_freq_hz=1e9)
    rate = transmission_rate(channel)
    profile = LatencyProfile.from_channel(channel, edge_comm_s=0.05)
    print(f"device uplink rate      {rate / 1e6:.2f} Mbit/s")
    print(f"device round time       {profile.device_comm_s:.3f}s comm + "
          f"{profile.device_comp_s:.3f}s compute")

    l_bc = consensus_latency(election_latency=0.4, submission_count=5,
                             per_message_latency=0.05, broadcast_latency=0.05)
    print(f"per-round consensus     {l_bc:.3f}s "
          f"(election + 5 submissions + broadcast)")
    for k in (1, 2, 3):
        window = waiting_period(k, profile.max_device_round_s)
        print(f"  K={k}: waiting window {window:.3f}s -> "
              f"{'fits' if l_bc <= window else 'does not fit'}")

    bounds = BoundParams(lipschitz=1.0, gap0=2.0, mean_lr=0.6, gamma0=0.9,
                         grad_var_edge=0.4, diff_mean_edge=0.2, diff_var_edge=0.2,
                         mean_edge_stragglers=1.0, n_edges=5,
                         devices_per_edge=5.0, straggler_devices=5.0)
    result = optimize_edge_rounds(T=60, n_edges=5, devices_per_edge=5,
                                  profile=profile, bp=bounds,
                                  bound_requirement=8.0,
                                  consensus_latency_s=l_bc, k_max=8)
    print(f"\noptimal K* = {result.k_star}  "
          f"(total latency {result.total_latency_s / 3600:.2f} h, "
          f"bound {result.bound:.3f})")
    print(f"{'K':>3} {'bound':>12} {'window(s)':>10} {'feasible':>9} {'latency(h)':>11}")
    for row in result.table:
        bound = f"{row.bound:.3f}" if row.bound is not None else "inapplicable"
        print(f"{row.K:>3} {bound:>12} {row.waiting_period_s:>10.3f} "
              f"{str(row.feasible):>9} {row.total_latency_s / 3600:>11.2f}")

    print("\nslower consensus pushes the optimum up once it outgrows the "
          "convergence-bound minimum:")
    for slow in (0.5, 8.0, 12.0, 16.0, 24.0):
        res = optimize_edge_rounds(60, 5, 5, profile, bounds, 8.0, slow, 16)
        print(f"  consensus {slow:4.1f}s -> K* = {res.k_star}"
              + (f" (binding: {', '.join(res.binding)})" if res.binding else ""))


if __name__ == "__main__":
    main()
