import sys
import os
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))

# Tabulates the OLE signal-to-noise ratio and its resolved-regime limit over a
# small (mu, a) grid. No images are generated: the SNR only needs the model.

# import the necessary libraries
import pandas as pd

from Estimator import snr, snr_resolved_limit
from Forward import build_measurement_matrix
from Model import ScenarioConfig

base = ScenarioConfig(n_rows=20, n_cols=20)
rows = []
for a in (2.0, 3.0, 4.0, 6.0, 8.0):
    config = base.with_overrides(spacing_a=a)
    geometry, psf = config.geometry(), config.psf()
    M = build_measurement_matrix(geometry, psf)
    for mu in (100.0, 200.0, 500.0, 1000.0):
        model = config.with_overrides(mu=mu).brightness()
        rows.append({'a': a, 'mu': mu,
                     'snr_db': snr(model, geometry, psf, M=M),
                     'resolved_limit_db': snr_resolved_limit(model, geometry, psf, M=M)})

table = pd.DataFrame(rows)
print(table.pivot(index='mu', columns='a', values='snr_db').round(2))
out = os.path.join(os.path.dirname(__file__), 'snr_map.csv')
table.to_csv(out, index=False, float_format='%.6g')
print(f"Wrote {out}")
