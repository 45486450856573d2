#!/usr/bin/env python3
"""Plot per-trigger minimum ASR against poison count from a sweep CSV."""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("csv", help="output of `spba_lab sweep`")
    parser.add_argument("-o", "--out", default="sweep.png", help="image file to write")
    parser.add_argument("--per-trigger", action="store_true",
                        help="use the per-trigger poison count on the x axis")
    args = parser.parse_args()

    df = pd.read_csv(args.csv)
    df = df[df["status"] == "ok"].copy()
    if df.empty:
        raise SystemExit("no successful cells in " + args.csv)
    x = "pn_total"
    if args.per_trigger:
        df["pn_each"] = df["pn_total"] // df["K"]
        x = "pn_each"

    stats = (df.groupby(["K", "mgda", x])["asr_per_trigger_min"]
             .agg(["mean", "std"]).reset_index().fillna(0.0))

    fig, ax = plt.subplots(figsize=(6, 4))
    for (k, mgda), group in stats.groupby(["K", "mgda"]):
        ax.errorbar(group[x], group["mean"], yerr=group["std"], marker="o", capsize=3,
                    linestyle="-" if mgda else "--",
                    label=f"K={k}, {'MGDA' if mgda else 'sum of losses'}")
    ax.set_xlabel("poisoned samples per trigger" if args.per_trigger else "poisoned samples (total)")
    ax.set_ylabel("minimum per-trigger ASR (%)")
    ax.set_ylim(0, 102)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(args.out)


if __name__ == "__main__":
    main()
