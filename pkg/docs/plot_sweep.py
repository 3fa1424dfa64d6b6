# plot_sweep.py
# Description: DER and SNR level curves over the (mu, a) grid of a sweep.csv.

import argparse
import logging

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

ESTIMATORS = ('prior', 'posterior', 'deconv')


def grid_values(table: pd.DataFrame, column: str) -> tuple:
    pivot = table.pivot_table(index='mu', columns='spacing_a', values=column)
    return pivot.columns.to_numpy(), pivot.index.to_numpy(), pivot.to_numpy()


def main() -> None:
    parser = argparse.ArgumentParser(description='Plot DER level curves from a sweep table.')
    parser.add_argument('sweep', type=str, help='sweep.csv written by `run.py sweep`')
    parser.add_argument('--out', type=str, default='sweep.png', help='Output image')
    args = parser.parse_args()

    table = pd.read_csv(args.sweep)
    table = table[table['tag'] == 'grid']
    present = [e for e in ESTIMATORS if table[f'{e}_der_mean'].notna().any()]
    if not present:
        raise SystemExit('The sweep table holds no DER columns')

    fig, axes = plt.subplots(1, len(present), figsize=(5 * len(present), 4), squeeze=False)
    a, mu, snr = grid_values(table, 'snr_db')
    for ax, name in zip(axes[0], present):
        _, _, der = grid_values(table, f'{name}_der_mean')
        mesh = ax.contourf(a, mu, 100 * der, levels=12, cmap='viridis')
        fig.colorbar(mesh, ax=ax, label='DER (%)')
        if np.isfinite(snr).sum() >= 4:
            lines = ax.contour(a, mu, snr, colors='white', linewidths=0.8)
            ax.clabel(lines, fmt='%.0f dB', fontsize=7)
        ax.set_xlabel('spacing a (px)')
        ax.set_ylabel('mu (photons)')
        ax.set_yscale('log')
        ax.set_title(name)
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    logger.info(f'Wrote {args.out}')


if __name__ == '__main__':
    main()
