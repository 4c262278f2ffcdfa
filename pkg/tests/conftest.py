from pathlib import Path

import numpy as np
import pytest
from scipy.special import expit

from winstats.trial_data import TrialDataset

DATA = Path(__file__).parent / "data"
ORCHID_COVARIATES = ("age_std", "female", "black", "hispanic", "baseline_status",
                     "symptom_days", "diabetes", "hypertension")


def random_trial(rng, n, L, p=2, effect=0.5, confounded=0.3, all_levels=True):
    """Random ordinal trial whose outcome depends on covariates and treatment."""
    for _ in range(100):
        x = rng.normal(size=(n, p))
        z = (rng.random(n) < expit(confounded * x[:, 0])).astype(np.int64)
        if not 2 <= z.sum() <= n - 2:
            continue
        lat = x @ rng.normal(0, 0.7, p) + effect * z + rng.logistic(size=n)
        cuts = np.sort(rng.normal(0, 1.2, L - 1))
        y = 1 + np.searchsorted(cuts, lat)
        if all_levels and len(np.unique(y)) < L:
            continue
        return TrialDataset(y=y, z=z, x=x, n_levels=L)
    raise RuntimeError("could not draw a valid random trial")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy():
    return TrialDataset(y=np.array([3, 2, 2, 1]), z=np.array([1, 1, 0, 0]),
                        x=np.array([[0.1], [0.4], [-0.3], [0.2]]), n_levels=3)


def bebu_brute(ds):
    """Triple enumeration of the U-statistic covariance components."""
    yt = ds.y[ds.z == 1].astype(float)
    yc = ds.y[ds.z == 0].astype(float)
    n1, n0 = len(yt), len(yc)
    win = (yt[:, None] > yc[None, :]).astype(float)  # treated x control
    loss = (yt[:, None] < yc[None, :]).astype(float)
    t1, tm = win.mean(), loss.mean()
    off0 = 1.0 - np.eye(n0)  # distinct controls j != k
    off1 = 1.0 - np.eye(n1)  # distinct treated i != k

    def same_treated(a, b):
        return np.einsum("ij,ik,jk->", a, b, off0) / (n1 * n0 * (n0 - 1))

    def same_control(a, b):
        return np.einsum("ij,kj,ik->", a, b, off1) / (n0 * n1 * (n1 - 1))

    return {
        "xi10": same_treated(win, win) - t1**2,
        "xi01": same_control(win, win) - t1**2,
        "xi10_loss": same_treated(loss, loss) - tm**2,
        "xi01_loss": same_control(loss, loss) - tm**2,
        "xi10_12": same_treated(win, loss) - t1 * tm,
        "xi01_12": same_control(win, loss) - t1 * tm,
    }
