#!/usr/bin/env python3
"""Regenerates the bundled network and time-series fixtures.

All impedances are per-unit on a 1 MVA base. The 34-node feeder follows the
IEEE 34-node test feeder topology (relabelled 1..34, regulators and the
in-line transformer replaced by short lines, impedances scaled down so the
feeder runs single-phase-equivalent without regulation). The 25/69/123-node
feeders are seeded random radial trees of the same sizes.

Usage: python3 generate_fixtures.py  (writes next to this file)
"""
import csv
import math
import os
import random
from datetime import datetime, timedelta

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
BASE_KV = 24.9

# IEEE 34 node feeder: (from, to, length_ft)
IEEE34_EDGES = [
    (800, 802, 2580), (802, 806, 1730), (806, 808, 32230), (808, 810, 5804),
    (808, 812, 37500), (812, 814, 29730), (814, 850, 10), (850, 816, 310),
    (816, 818, 1710), (818, 820, 48150), (820, 822, 13740), (816, 824, 10210),
    (824, 826, 3030), (824, 828, 840), (828, 830, 20440), (830, 854, 520),
    (854, 856, 23330), (854, 852, 36830), (852, 832, 10), (832, 888, 10),
    (888, 890, 10560), (832, 858, 4900), (858, 864, 1620), (858, 834, 5830),
    (834, 842, 280), (842, 844, 1350), (844, 846, 3640), (846, 848, 530),
    (834, 860, 2020), (860, 836, 2680), (836, 840, 860), (836, 862, 280),
    (862, 838, 4860),
]
# ESS sites sit at feeder ends and must carry labels 12, 16, 27 and 34.
IEEE34_PINNED = {822: 12, 856: 16, 848: 27, 838: 34}


def relabel_ieee34():
    children = {}
    for a, b, _ in IEEE34_EDGES:
        children.setdefault(a, []).append(b)
    order = []
    stack = [800]
    while stack:
        n = stack.pop()
        order.append(n)
        stack.extend(reversed(children.get(n, [])))
    free = [n for n in order if n not in IEEE34_PINNED]
    labels = {}
    next_label = 1
    for n in free:
        while next_label in IEEE34_PINNED.values():
            next_label += 1
        labels[n] = next_label
        next_label += 1
    labels.update(IEEE34_PINNED)
    assert sorted(labels.values()) == list(range(1, 35))
    assert labels[800] == 1
    return labels


def ieee34_lines():
    labels = relabel_ieee34()
    # 0.17 + j0.15 ohm/kft after scaling (about 40% of the original ACSR #2 data)
    r_per_ft, x_per_ft = 0.17e-3, 0.15e-3
    z_base = BASE_KV ** 2 / 1.0
    lines = []
    for a, b, ft in IEEE34_EDGES:
        ft = max(ft, 50)
        lines.append((labels[a], labels[b], r_per_ft * ft / z_base, x_per_ft * ft / z_base))
    return 34, lines


def random_feeder(n, seed):
    rng = random.Random(seed)
    lines = []
    for node in range(2, n + 1):
        # prefer extending recent nodes to get long laterals
        lo = max(1, node - 6)
        parent = rng.randint(lo, node - 1)
        r = rng.uniform(0.002, 0.006) * min(1.0, 40.0 / n)
        x = r * rng.uniform(0.6, 1.2)
        lines.append((parent, node, r, x))
    return n, lines


def write_network(name, n, lines):
    d = os.path.join(HERE, name)
    os.makedirs(d, exist_ok=True)
    with open(os.path.join(d, "nodes.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["node_id", "kind", "base_kv"])
        for i in range(1, n + 1):
            w.writerow([i, "slack" if i == 1 else "pq", BASE_KV])
    with open(os.path.join(d, "lines.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["from_node", "to_node", "r_pu", "x_pu", "i_max_pu"])
        for a, b, r, x in lines:
            w.writerow([a, b, f"{r:.8f}", f"{x:.8f}", "2.0"])


def nr_vmag(n, lines, p, q):
    """Plain Newton power flow used only to sanity check the fixture loading."""
    y = np.zeros((n, n), dtype=complex)
    for a, b, r, x in lines:
        ys = 1 / complex(r, x)
        i, j = a - 1, b - 1
        y[i, i] += ys
        y[j, j] += ys
        y[i, j] -= ys
        y[j, i] -= ys
    v = np.ones(n, dtype=complex)
    s = np.concatenate([[0], p + 1j * q])
    ydd = y[1:, 1:]
    yds = y[1:, 0]
    for _ in range(200):
        vd = np.linalg.solve(ydd, np.conj(s[1:] / v[1:]) - yds * v[0])
        if np.max(np.abs(vd - v[1:])) < 1e-12:
            v[1:] = vd
            break
        v[1:] = vd
    return np.abs(v)


def daily_load_shape(hours):
    morning = np.exp(-0.5 * ((hours - 8.0) / 1.5) ** 2)
    evening = np.exp(-0.5 * ((hours - 19.0) / 2.0) ** 2)
    return 0.35 + 0.35 * morning + 0.65 * evening


def pv_shape(hours):
    return np.clip(np.cos((hours - 13.0) / 12.0 * 2 * math.pi * 0.95), 0, None) ** 1.5 * (
        (hours > 6.5) & (hours < 19.5)
    )


def write_ieee34_timeseries(n, lines):
    rng = np.random.default_rng(20240101)
    days, per_day = 30, 96
    rows = days * per_day
    hours = (np.arange(rows) % per_day) * 0.25
    start = datetime(2024, 6, 1)
    node_peak = {m: rng.uniform(20, 70) for m in range(2, n + 1)}
    pv_nodes = {5: 120.0, 9: 90.0, 13: 150.0, 20: 110.0, 24: 140.0, 30: 100.0}
    shape = daily_load_shape(hours)
    day_level = np.repeat(rng.normal(1.0, 0.08, days), per_day)
    cloud = np.repeat(rng.uniform(0.35, 1.0, days), per_day)
    pv_base = pv_shape(hours)
    price_shape = 0.06 + 0.05 * np.exp(-0.5 * ((hours - 8) / 1.5) ** 2) + 0.09 * np.exp(
        -0.5 * ((hours - 19) / 1.8) ** 2
    ) - 0.03 * pv_base
    price = price_shape * np.repeat(rng.normal(1.0, 0.1, days), per_day) + rng.normal(0, 0.004, rows)

    header = ["timestamp"]
    cols = []
    for m in range(2, n + 1):
        header.append(f"p_node_{m}")
        p = node_peak[m] * shape * day_level * (1 + rng.normal(0, 0.05, rows))
        cols.append(p)
    for m in range(2, n + 1):
        header.append(f"q_node_{m}")
        cols.append(cols[m - 2] * 0.33 * (1 + rng.normal(0, 0.02, rows)))
    for m, peak in pv_nodes.items():
        header.append(f"pv_node_{m}")
        cols.append(np.clip(peak * pv_base * cloud * (1 + rng.normal(0, 0.05, rows)), 0, None))
    header.append("price")
    cols.append(price)

    d = os.path.join(HERE, "ieee34")
    with open(os.path.join(d, "timeseries.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for i in range(rows):
            ts = (start + timedelta(minutes=15 * i)).strftime("%Y-%m-%dT%H:%M:%S")
            w.writerow([ts] + [f"{c[i]:.4f}" for c in cols])

    # report voltage range at the daily peak of day 0 with no PV
    peak_slot = int(np.argmax(shape[:per_day]))
    p = -np.array([cols[m - 2][peak_slot] for m in range(2, n + 1)]) / 1000.0
    q = -np.array([cols[n - 1 + m - 2][peak_slot] for m in range(2, n + 1)]) / 1000.0
    vm = nr_vmag(n, lines, p, q)
    print(f"ieee34 peak slot {peak_slot}: min |v| = {vm.min():.4f} at node {vm.argmin() + 1}")

    with open(os.path.join(d, "ess.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["node_id", "capacity_kwh", "p_min_kw", "p_max_kw", "soc_min", "soc_max", "efficiency"])
        for m in (12, 16, 27, 34):
            w.writerow([m, 500, -50, 50, 0.2, 0.8, 0.95])


def write_toy():
    d = os.path.join(HERE, "toy2")
    os.makedirs(d, exist_ok=True)
    write_network("toy2", 2, [(1, 2, 0.05, 0.05)])
    with open(os.path.join(d, "ess.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["node_id", "capacity_kwh", "p_min_kw", "p_max_kw", "soc_min", "soc_max", "efficiency"])
        w.writerow([2, 200, -50, 50, 0.2, 0.8, 1.0])
    start = datetime(2024, 1, 1)
    with open(os.path.join(d, "timeseries.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["timestamp", "p_node_2", "q_node_2", "price"])
        for day in range(2):
            for h in range(24):
                ts = (start + timedelta(days=day, hours=h)).strftime("%Y-%m-%dT%H:%M:%S")
                price = 0.1 if h % 2 == 0 else 0.3
                w.writerow([ts, 10.0, 2.0, price])


def main():
    n, lines = ieee34_lines()
    write_network("ieee34", n, lines)
    write_ieee34_timeseries(n, lines)
    for size, seed in ((25, 25), (69, 69), (123, 123)):
        n, lines = random_feeder(size, seed)
        write_network(f"feeder{size}", n, lines)
        p = -np.full(n - 1, 0.012)
        q = p * 0.33
        vm = nr_vmag(n, lines, p, q)
        print(f"feeder{size}: min |v| at 12 kW/node = {vm.min():.4f}")
    write_toy()


if __name__ == "__main__":
    main()
