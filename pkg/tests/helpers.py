"""Shared synthetic data and the acceptance report."""

import math

import numpy as np

from firstarrival.basis import GpHyper, SiteGrid, build_basis, gp_draw
from firstarrival.distributions import HougaardParams
from firstarrival.inference import FitData
from firstarrival.process import MarginalSurfaces, ProcessModel, simulate_field

RESULTS = []


def report(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def synthetic(seed, S=40, T=8, L=4, alpha=0.5, theta=1.0, xi=-0.2, extent=500.0):
    """Intercept-only fit data from the process model on a square of side ``extent`` km."""
    rng = np.random.default_rng(seed)
    sites = SiteGrid(tuple(f"s{i:02d}" for i in range(S)), rng.uniform(0, extent, (S, 2)))
    latent = np.vstack([gp_draw(sites, 0.0, GpHyper(1.0, 150.0), rng) for _ in range(L - 1)])
    mu = 60.0 + gp_draw(sites, 0.0, GpHyper(4.0, 150.0), rng)
    model = ProcessModel(HougaardParams.reparameterized(alpha, theta), build_basis(latent),
                         MarginalSurfaces(mu, np.full(S, math.log(8.0)), xi))
    field = simulate_field(model, T, seed=int(rng.integers(2**31)))
    data = FitData.intercept_only(sites, tuple(range(2000, 2000 + T)), field.data)
    return data, model


def split_sites(data: FitData, holdout):
    """Training and holdout :class:`FitData` for intercept-only data."""
    hold = np.asarray(sorted(holdout))
    train = np.setdiff1d(np.arange(len(data.sites)), hold)

    def part(idx):
        return FitData.intercept_only(data.sites.subset(idx), data.years, data.z[:, idx])

    return part(train), part(hold)
