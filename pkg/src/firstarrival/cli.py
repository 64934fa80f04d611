"""Batch command-line front end.

Subcommands: simulate, prepare-data, fit, score, predict, project, plot.
Every output file starts with (or, for SVG, embeds) ``config_hash`` and
``seed``.  Failures print one line ``error <ErrorClass>: <message>`` to
stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .basis import GpHyper, SiteGrid, build_basis, gp_draw, project_equal_area
from .config import RunConfig, load_config
from .data import (ArrivalTable, ClimateTable, DesignBundle, SiteCovariates, SiteTable,
                   assemble_design, compute_first_arrivals, design_columns, parse_sightings,
                   read_climate, read_sites, to_fit_data)
from .distributions import HougaardParams
from .errors import ConfigError, DataError, DomainError, FirstArrivalError
from .inference import McmcConfig, Priors, read_posterior, run_chain, write_posterior
from .predict import (predict_conditional, predict_future, read_summaries, summarize_draws,
                      write_predictions, write_summaries)
from .process import MarginalSurfaces, ProcessModel, simulate_field
from .selection import candidate_grid_run, write_scores

log = logging.getLogger("firstarrival")

EXIT_CODES = {"ConfigError": 2, "DataError": 3, "DomainError": 4, "OutputExistsError": 5,
              "IOError": 6}


class OutputExistsError(FirstArrivalError):
    """Refusing to overwrite existing outputs without ``--force``."""


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _out(cfg: RunConfig, name):
    p = cfg.path(name)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _input(explicit, cfg: RunConfig, default_name, what):
    path = Path(explicit) if explicit else cfg.path(default_name)
    if not path.exists():
        raise DataError(f"{what} file not found: {path}")
    return path


def _guard(paths, force):
    existing = [str(p) for p in paths if p.exists()]
    if existing and not force:
        raise OutputExistsError(f"outputs exist (use --force to overwrite): {', '.join(existing)}")


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_tables(cfg: RunConfig):
    sites = read_sites(_input(cfg.data.sites, cfg, "sites.csv", "sites"))
    climate_path = Path(cfg.data.climate) if cfg.data.climate else cfg.path("climate.csv")
    climate = read_climate(climate_path) if climate_path.exists() else None
    return sites, climate


def _covariate_choice(cfg: RunConfig, climate):
    m = cfg.model
    year_mu = m.mu_year_covariates if climate is not None else []
    year_gamma = m.gamma_year_covariates if climate is not None else []
    site_cols = sorted(set(m.mu_site_covariates) | set(m.gamma_site_covariates))
    year_cols = sorted(set(year_mu) | set(year_gamma))
    return site_cols, year_cols, year_mu, year_gamma


def _fit_data(cfg, arrivals, sites, climate, design, year_mu, year_gamma):
    m = cfg.model
    return to_fit_data(arrivals, design, sites, climate, mu_site=m.mu_site_covariates,
                       mu_year=year_mu, gamma_site=m.gamma_site_covariates,
                       gamma_year=year_gamma, C=m.negation_constant)


def _mcmc(cfg: RunConfig, **kw):
    s = cfg.mcmc
    base = dict(iterations=s.iterations, burn_in=s.burn_in, thin=s.thin,
                cluster_size=s.cluster_size, n_basis=cfg.model.n_basis,
                scale_mode=cfg.model.scale_mode, seed=cfg.seed, adapt=s.adapt,
                step_sizes=dict(s.step_sizes))
    base.update(kw)
    return McmcConfig(**base)


def _priors(cfg: RunConfig):
    return Priors(**cfg.priors.model_dump())


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, args):
    """Synthetic sites, climate and arrivals from the configured process model."""
    sim = cfg.simulate
    outputs = [cfg.path(n) for n in ("sites.csv", "climate.csv", "arrivals.csv", "truth.json")]
    _guard(outputs, args.force)
    ss = np.random.SeedSequence(cfg.seed)
    site_ss, clim_ss, field_ss, proc_ss = ss.spawn(4)
    rng = np.random.default_rng(site_ss)
    S, T = sim.n_sites, sim.n_years
    half = sim.extent_deg / 2.0
    lon = np.round(sim.center_lon + rng.uniform(-half, half, S), 4)
    lat = np.round(sim.center_lat + rng.uniform(-half, half, S), 4)
    ids = tuple(f"site{i:03d}" for i in range(S))
    grid0 = SiteGrid.from_lonlat(ids, lon, lat)
    elev = np.round(300.0 + gp_draw(grid0, 0.0, GpHyper(150.0**2, 200.0), rng), 1)
    forest = np.round(rng.uniform(0.1, 0.9, S), 3)
    water = np.round(rng.beta(1.0, 20.0, S), 4)
    pop = np.round(rng.lognormal(4.0, 1.0, S), 2)
    sites = SiteTable(tuple(SiteCovariates(*row) for row in zip(
        ids, lon.tolist(), lat.tolist(), elev.tolist(), forest.tolist(), water.tolist(),
        pop.tolist())))
    grid = sites.grid()[0]

    crng = np.random.default_rng(clim_ss)
    years = tuple(range(sim.first_year, sim.first_year + T))
    climate = ClimateTable(years, {"temp_anom": np.round(crng.normal(0.0, 60.0, T)),
                                   "nao": np.round(crng.normal(0.0, 1.0, T), 3)})

    # effects act on covariates standardized exactly as prepare-data/fit will do
    full = ArrivalTable(years, ids, np.zeros((T, S)))
    design = assemble_design(full, sites, climate, standardize=True)
    frng = np.random.default_rng(field_ss)
    mu_site = np.full(S, sim.mu_intercept)
    for name, b in sim.mu_site_effects.items():
        mu_site += b * design_columns(design.site_matrix, design.site_names, [name])[:, 0]
    mu_year = np.zeros(T)
    for name, b in sim.mu_year_effects.items():
        mu_year += b * design_columns(design.year_matrix, design.year_names, [name])[:, 0]
    eta = gp_draw(grid, 0.0, GpHyper(sim.mu_gp_variance, sim.mu_gp_range), frng)
    mu = mu_site[None, :] + mu_year[:, None] + eta[None, :]
    latent = np.vstack([gp_draw(grid, 0.0, GpHyper(sim.latent_variance, sim.latent_range), frng)
                        for _ in range(sim.n_basis - 1)])
    model = ProcessModel(HougaardParams.reparameterized(sim.alpha, sim.theta), build_basis(latent),
                         MarginalSurfaces(mu, np.full((T, S), sim.log_sigma), sim.xi))
    field = simulate_field(model, T, seed=proc_ss)
    C = cfg.model.negation_constant
    days = np.round(C - field.data, 2)
    miss = frng.random((T, S)) < sim.missing_frac
    days[miss | (days < 0.0) | (days > 122.0)] = np.nan
    arrivals = ArrivalTable(years, ids, days)

    header = cfg.header()
    _write_sites(sites, _out(cfg, "sites.csv"), header)
    _write_climate(climate, _out(cfg, "climate.csv"), header)
    arrivals.write_csv(_out(cfg, "arrivals.csv"), header)
    _write_json(_out(cfg, "truth.json"), {
        "config_hash": cfg.digest(), "seed": cfg.seed, "alpha": sim.alpha, "theta": sim.theta,
        "xi": sim.xi, "log_sigma": sim.log_sigma, "A": field.A.tolist(),
        "latent": latent.tolist(), "eta_mu": eta.tolist(), "mu": mu.tolist(),
        "n_missing": int(np.isnan(days).sum())})
    return 0


def _write_sites(sites: SiteTable, path, header):
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        fh.write("site_id,lon,lat,elevation_m,forest_cover,water_frac,pop_density\n")
        for r in sites.rows:
            vals = (r.lon, r.lat, r.elevation_m, r.forest_cover, r.water_frac, r.pop_density)
            fh.write(",".join([r.site_id, *(repr(float(v)) for v in vals)]) + "\n")


def _write_climate(climate: ClimateTable, path, header):
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        fh.write("year,temp_anom,nao\n")
        for i, y in enumerate(climate.years):
            fh.write(f"{y},{float(climate.values['temp_anom'][i])!r},"
                     f"{float(climate.values['nao'][i])!r}\n")


def cmd_prepare_data(cfg: RunConfig, args):
    """Sightings to first arrivals, plus the standardized design summary."""
    outputs = [cfg.path(n) for n in ("arrivals.csv", "design.json", "sighting_errors.csv")]
    _guard(outputs, args.force)
    sites, climate = _load_tables(cfg)
    report = parse_sightings(_input(cfg.data.sightings, cfg, "sightings.csv", "sightings"),
                             known_sites=sites.site_ids)
    years = sorted({r.date.year for r in report.records})
    arrivals = compute_first_arrivals(report.records, years=years, sites=sites.site_ids,
                                      window=(tuple(cfg.data.window_start),
                                              tuple(cfg.data.window_end)),
                                      min_obs=cfg.data.min_obs)
    site_cols, year_cols, _, _ = _covariate_choice(cfg, climate)
    design = assemble_design(arrivals, sites, climate, cfg.data.standardize, site_cols, year_cols)
    header = cfg.header()
    arrivals.write_csv(_out(cfg, "arrivals.csv"), header)
    _write_json(_out(cfg, "design.json"), dict(design.to_json(), config_hash=cfg.digest(),
                                               seed=cfg.seed))
    with open(_out(cfg, "sighting_errors.csv"), "w") as fh:
        fh.write(header + "\nline,message\n")
        for line, msg in report.errors:
            fh.write(f"{line},{json.dumps(msg)}\n")
    if report.errors:
        log.warning("%d malformed sighting rows; see sighting_errors.csv", len(report.errors))
    return 0


def _training_inputs(cfg: RunConfig, site_ids=None):
    arrivals = ArrivalTable.read_csv(_input(cfg.data.arrivals, cfg, "arrivals.csv", "arrivals"))
    if site_ids is not None:
        arrivals = arrivals.subset_sites(site_ids)
    sites, climate = _load_tables(cfg)
    site_cols, year_cols, year_mu, year_gamma = _covariate_choice(cfg, climate)
    return arrivals, sites, climate, site_cols, year_cols, year_mu, year_gamma


def cmd_fit(cfg: RunConfig, args):
    """Run the sampler and write posterior draws plus metadata."""
    csv_path, meta_path = cfg.path("posterior.csv"), cfg.path("posterior.json")
    _guard([csv_path, meta_path], args.force)
    arrivals, sites, climate, site_cols, year_cols, year_mu, year_gamma = _training_inputs(cfg)
    design = assemble_design(arrivals, sites, climate, cfg.data.standardize, site_cols, year_cols)
    data = _fit_data(cfg, arrivals, sites, climate, design, year_mu, year_gamma)
    samples = run_chain(data, _priors(cfg), _mcmc(cfg))
    phi, lon0 = sites.projection()
    samples.meta.update({
        "config_hash": cfg.digest(),
        "negation_constant": cfg.model.negation_constant,
        "design": design.to_json(),
        "covariates": {"mu_site": list(cfg.model.mu_site_covariates), "mu_year": list(year_mu),
                       "gamma_site": list(cfg.model.gamma_site_covariates),
                       "gamma_year": list(year_gamma)},
        "projection": {"standard_parallel_deg": phi, "central_meridian_deg": lon0},
        "version": __version__,
    })
    write_posterior(samples, _out(cfg, "posterior.csv"), _out(cfg, "posterior.json"),
                    cfg.header())
    return 0


def cmd_score(cfg: RunConfig, args):
    """Hold out sites and score each candidate basis size and scale mode."""
    out = cfg.path("scores.csv")
    _guard([out], args.force)
    arrivals = ArrivalTable.read_csv(_input(cfg.data.arrivals, cfg, "arrivals.csv", "arrivals"))
    if cfg.selection.holdout_sites:
        holdout = tuple(cfg.selection.holdout_sites)
        unknown = [s for s in holdout if s not in arrivals.sites]
        if unknown:
            raise DataError(f"holdout sites not in arrivals: {unknown}")
    else:
        n = cfg.selection.holdout_count
        if n >= len(arrivals.sites):
            raise DomainError("holdout_count must leave at least one training site")
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x686f6c64]))
        holdout = tuple(sorted(rng.choice(arrivals.sites, n, replace=False).tolist()))
    train_ids = tuple(s for s in arrivals.sites if s not in holdout)
    arr_tr, sites, climate, site_cols, year_cols, year_mu, year_gamma = _training_inputs(
        cfg, train_ids)
    design = assemble_design(arr_tr, sites, climate, cfg.data.standardize, site_cols, year_cols)
    train = _fit_data(cfg, arr_tr, sites, climate, design, year_mu, year_gamma)
    test = _fit_data(cfg, arrivals.subset_sites(holdout), sites, climate, design, year_mu,
                     year_gamma)
    rows = candidate_grid_run(train, test, _priors(cfg), _mcmc(cfg),
                              L_values=tuple(cfg.selection.L_values),
                              scale_modes=tuple(cfg.selection.scale_modes),
                              trim=cfg.selection.trim, workers=args.workers)
    write_scores(rows, _out(cfg, "scores.csv"), cfg.header())
    return 0


def _posterior(cfg: RunConfig):
    samples = read_posterior(_input(None, cfg, "posterior.csv", "posterior"),
                             _input(None, cfg, "posterior.json", "posterior metadata"))
    if cfg.predict.n_draws is not None and cfg.predict.n_draws < samples.n_draws:
        # evenly spaced subset of the retained draws
        keep = np.linspace(0, samples.n_draws - 1, cfg.predict.n_draws).round().astype(int)
        samples.draws = {k: v[keep] for k, v in samples.draws.items()}
    return samples


def _target(cfg: RunConfig, samples):
    """Target sites projected like the training sites, with standardized designs."""
    meta = samples.meta
    path = cfg.predict.target_sites or cfg.data.sites
    sites = read_sites(_input(path, cfg, "sites.csv", "target sites"))
    proj = meta["projection"]
    xy, _ = project_equal_area(sites.column("lon"), sites.column("lat"),
                               proj["standard_parallel_deg"], proj["central_meridian_deg"])
    grid = SiteGrid(sites.site_ids, xy)
    design = DesignBundle.from_json(meta["design"])
    cov = meta["covariates"]
    x_site = design.site_design(sites)
    x_mu = design_columns(x_site, design.site_names, cov["mu_site"], intercept=True)
    x_gamma = design_columns(x_site, design.site_names, cov["gamma_site"], intercept=True)
    return grid, x_mu, x_gamma, design, cov


def cmd_predict(cfg: RunConfig, args):
    """Conditional predictive draws at target sites for fitted years."""
    outputs = [cfg.path("predictions.csv"), cfg.path("summaries.csv")]
    _guard(outputs, args.force)
    samples = _posterior(cfg)
    grid, x_mu, x_gamma, _, _ = _target(cfg, samples)
    years = cfg.predict.years or list(samples.data.years)
    pred = predict_conditional(samples, grid, x_mu, x_gamma, years, seed=cfg.seed,
                               C=samples.meta["negation_constant"])
    header = cfg.header()
    write_predictions(pred, _out(cfg, "predictions.csv"), header)
    write_summaries(summarize_draws(pred), _out(cfg, "summaries.csv"), header)
    flagged = float(pred.out_of_range.mean())
    if flagged > 0:
        log.warning("%.1f%% of predictive draws fall outside the arrival window", 100 * flagged)
    return 0


def cmd_project(cfg: RunConfig, args):
    """Unconditional draws under a future climate, with shifts from a base year."""
    outputs = [cfg.path("projections.csv"), cfg.path("projection_summaries.csv")]
    _guard(outputs, args.force)
    if not cfg.project.climate:
        raise ConfigError(["project.climate: a future climate file is required"])
    samples = _posterior(cfg)
    grid, x_mu, x_gamma, design, cov = _target(cfg, samples)
    future = read_climate(cfg.project.climate)
    years = cfg.project.years or list(future.years)
    x_year = design.year_design(future, years)
    xm_y = design_columns(x_year, design.year_names, cov["mu_year"])
    xg_y = design_columns(x_year, design.year_names, cov["gamma_year"])
    C = samples.meta["negation_constant"]
    pred = predict_future(samples, grid, x_mu, x_gamma, years, xm_y, xg_y, seed=cfg.seed, C=C)
    base_year = cfg.project.base_year or samples.data.years[-1]
    i = samples.data.year_index(base_year)
    # the baseline uses the same unconditional construction under the base year's climate
    base = predict_future(samples, grid, x_mu, x_gamma, [base_year], samples.data.x_mu_year[[i]],
                          samples.data.x_gamma_year[[i]], seed=cfg.seed + 1, C=C)
    header = cfg.header()
    write_predictions(pred, _out(cfg, "projections.csv"), header)
    write_summaries(summarize_draws(pred, base), _out(cfg, "projection_summaries.csv"), header)
    return 0


def cmd_plot(cfg: RunConfig, args):
    """Map one summary column at the target sites as a deterministic SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "firstarrival"
    matplotlib.rcParams["svg.fonttype"] = "none"
    rows = read_summaries(_input(cfg.plot.summaries, cfg, "summaries.csv", "summaries"))
    column = cfg.plot.column
    if column not in ("mean", "sd", "diff_vs_base"):
        raise ConfigError([f"plot.column: unknown summary column {column!r}"])
    sites = read_sites(_input(cfg.data.sites, cfg, "sites.csv", "sites"))
    lookup = {r.site_id: r for r in sites.rows}
    years = sorted({r.year for r in rows})
    outputs = [cfg.path(f"plots/{column}_{y}.{ext}") for y in years for ext in ("svg", "csv")]
    _guard(outputs, args.force)
    header = cfg.header()
    for y in years:
        sel = [r for r in rows if r.year == y]
        missing = [r.site_id for r in sel if r.site_id not in lookup]
        if missing:
            raise DataError(f"no coordinates for sites {missing}")
        vals = np.array([getattr(r, column) for r in sel], dtype=float)
        if np.any(~np.isfinite(vals)):
            raise DataError(f"column {column} has missing values for year {y}")
        lon = np.array([lookup[r.site_id].lon for r in sel])
        lat = np.array([lookup[r.site_id].lat for r in sel])
        vmin, vmax = float(vals.min()), float(vals.max())
        if vmin == vmax:
            vmin, vmax = vmin - 0.5, vmax + 0.5
        label = {"mean": "mean arrival day", "sd": "SD of arrival day",
                 "diff_vs_base": "difference in mean arrival day"}[column]
        fig, ax = plt.subplots(figsize=(6, 5))
        pts = ax.scatter(lon, lat, c=vals, cmap="viridis", vmin=vmin, vmax=vmax, s=40,
                         edgecolors="k", linewidths=0.3)
        fig.colorbar(pts, ax=ax, label=label)
        ax.set_xlabel("longitude")
        ax.set_ylabel("latitude")
        ax.set_title(f"{label}, {y}")
        meta = {"config_hash": cfg.digest(), "seed": cfg.seed, "year": y, "column": column,
                "legend": label, "colormap": "viridis", "color_min": vmin, "color_max": vmax,
                "n_sites": len(sel)}
        svg = _out(cfg, f"plots/{column}_{y}.svg")
        fig.savefig(svg, format="svg", metadata={"Date": None,
                                                 "Description": json.dumps(meta, sort_keys=True)})
        plt.close(fig)
        with open(_out(cfg, f"plots/{column}_{y}.csv"), "w") as fh:
            fh.write(header + "\n")
            fh.write(f"site_id,lon,lat,{column}\n")
            for r, a, b, v in zip(sel, lon, lat, vals):
                fh.write(f"{r.site_id},{float(a)!r},{float(b)!r},{float(v)!r}\n")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "prepare-data": cmd_prepare_data,
    "fit": cmd_fit,
    "score": cmd_score,
    "predict": cmd_predict,
    "project": cmd_project,
    "plot": cmd_plot,
}


def build_parser():
    p = argparse.ArgumentParser(prog="firstarrival", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or name).splitlines()[0])
        sp.add_argument("--config", type=Path, help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--workers", type=int, default=1, help="maximum worker processes")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _error_line(exc):
    name = type(exc).__name__
    if isinstance(exc, OSError) and not isinstance(exc, FirstArrivalError):
        name = "IOError"
    msg = " ".join(str(exc).split())
    return name, f"error {name}: {msg}"


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError(["--workers must be at least 1"])
        cfg = load_config(args.config, seed=args.seed)
        return COMMANDS[args.command](cfg, args)
    except (FirstArrivalError, OSError) as exc:
        name, line = _error_line(exc)
        print(line, file=sys.stderr)
        return EXIT_CODES.get(name, 1)


if __name__ == "__main__":
    sys.exit(main())
