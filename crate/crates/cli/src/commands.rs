use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fer_er::model::lattice_energy_density;
use fer_er::rg::{correlators_from, DENSE_RECONSTRUCTION_LIMIT};
use fer_er::{
    build_geometry, entropy_scan, exact_gs_energy_density, fixed_point_distance, ground_state,
    reconstruct_correlators, rg_flow, RGTrajectory,
};
use serde_json::json;

use crate::config::ExperimentConfig;

/// Float with 17 significant digits; empty for a missing value.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<fs::File>> {
    let path = dir.join(name);
    csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn prepare(config: &ExperimentConfig) -> Result<&Path> {
    let dir = config.outputs.dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(dir, "config.json", config)?;
    Ok(dir)
}

pub fn dump_geometry(config: &ExperimentConfig) -> Result<()> {
    let dir = prepare(config)?;
    let m = &config.model;
    let geom = build_geometry(m.dimension, m.grouped_sites(), m.modes_per_site)?;
    fs::write(dir.join("geometry.json"), geom.to_json()?)?;
    Ok(())
}

/// Exact ground state: energy summary and `(L, S_L)`.
pub fn ground_state_cmd(config: &ExperimentConfig) -> Result<bool> {
    let dir = prepare(config)?;
    let gs = ground_state(&config.model)?;
    let exact = exact_gs_energy_density(&config.model)?;
    let energy = lattice_energy_density(&config.model, &gs.lattice)?;
    let mut w = writer(dir, "entropy.csv")?;
    w.write_record(["L", "S_L"])?;
    for (l, s) in entropy_scan(&gs.lattice, &config.outputs.entropy_ladder)? {
        w.write_record([l.to_string(), num(s)])?;
    }
    w.flush()?;
    write_json(
        dir,
        "ground_state.json",
        &json!({
            "modes": config.model.mode_count(),
            "sites_per_axis": gs.lattice.sites_per_axis(),
            "modes_per_site": gs.lattice.modes_per_site(),
            "zero_modes": gs.zero_modes,
            "energy_density": energy,
            "exact_energy_density": exact,
        }),
    )?;
    Ok(true)
}

fn write_levels(dir: &Path, name: &str, traj: &RGTrajectory) -> Result<()> {
    let mut w = writer(dir, name)?;
    w.write_record([
        "level",
        "sites_per_axis",
        "modes_per_site",
        "eps_max",
        "eps_mean",
        "S_block",
        "energy_density",
        "energy_err_rel",
        "fp_distance",
        "iterations",
        "converged",
    ])?;
    for r in traj.reports() {
        w.write_record([
            r.level.to_string(),
            r.sites_per_axis.to_string(),
            r.modes_per_site.to_string(),
            num(r.eps_max),
            num(r.eps_mean),
            num(r.block_entropy),
            opt(r.energy_density),
            opt(r.energy_error_rel),
            opt(r.fp_distance),
            r.iterations.to_string(),
            r.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_entropies(dir: &Path, traj: &RGTrajectory) -> Result<()> {
    let mut w = writer(dir, "entropy.csv")?;
    w.write_record(["level", "L", "S_L"])?;
    for r in traj.reports() {
        for &(l, s) in &r.entropies {
            w.write_record([r.level.to_string(), l.to_string(), num(s)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// The RG flow with per-level reports; with `compare`, a second flow and
/// the level-by-level distance between the two.
pub fn rg_run(config: &ExperimentConfig, compare: Option<&ExperimentConfig>) -> Result<bool> {
    let dir = prepare(config)?;
    let traj = rg_flow(&config.model, &config.flow_options())?;
    write_levels(dir, "levels.csv", &traj)?;
    write_entropies(dir, &traj)?;
    if config.outputs.write_trajectory {
        fs::write(dir.join("trajectory.json"), traj.to_json()?)?;
    }
    let mut converged = traj.converged();
    let mut summary = summarize(&traj);
    if let Some(other) = compare {
        let second = rg_flow(&other.model, &other.flow_options())?;
        converged &= second.converged();
        write_levels(dir, "compare_levels.csv", &second)?;
        let mut w = writer(dir, "compare.csv")?;
        w.write_record(["level", "fp_distance"])?;
        let mut last = None;
        for (a, b) in traj.levels.iter().zip(&second.levels).skip(1) {
            let d = fixed_point_distance(&a.lattice, &b.lattice)?;
            w.write_record([a.level.to_string(), num(d)])?;
            last = Some(d);
        }
        w.flush()?;
        summary["compare"] = json!({ "model": other.model, "final_fp_distance": last });
    }
    write_json(dir, "summary.json", &summary)?;
    Ok(converged)
}

fn summarize(traj: &RGTrajectory) -> serde_json::Value {
    let last = traj.levels.last().map(|l| &l.report);
    json!({
        "model": traj.spec,
        "levels": traj.layers.len(),
        "converged": traj.converged(),
        "eps_max": traj.reports().map(|r| r.eps_max).fold(0.0, f64::max),
        "final_block_entropy": last.map(|r| r.block_entropy),
        "final_energy_err_rel": last.and_then(|r| r.energy_error_rel),
        "final_fp_distance": last.and_then(|r| r.fp_distance),
    })
}

pub fn check_correlators(config: &ExperimentConfig) -> Result<()> {
    let m = config.model.mode_count();
    if m > DENSE_RECONSTRUCTION_LIMIT {
        bail!("correlator reconstruction is limited to {DENSE_RECONSTRUCTION_LIMIT} modes, the model has {m}");
    }
    if config.outputs.correlator_level.is_some_and(|l| l > config.flow.levels) {
        bail!("outputs.correlator_level exceeds flow.levels");
    }
    Ok(())
}

/// `<a_r† a_s>` of the exact ground state against the one the MERA
/// reconstructs from the chosen level.
pub fn correlators_cmd(config: &ExperimentConfig) -> Result<bool> {
    let m = config.model.mode_count();
    let pairs: Vec<(usize, usize)> = if config.outputs.pairs.is_empty() {
        (1..=config.outputs.max_separation.min(m - 1)).map(|d| (0, d)).collect()
    } else {
        config.outputs.pairs.clone()
    };
    let dir = prepare(config)?;
    let mut options = config.flow_options();
    options.energy = false;
    let traj = rg_flow(&config.model, &options)?;
    let level = config.outputs.correlator_level.unwrap_or(traj.layers.len());
    let exact = correlators_from(&traj.levels[0].lattice.to_dense(), &pairs)?;
    let approx = reconstruct_correlators(&traj, level, &pairs)?;
    let mut w = writer(dir, "correlators.csv")?;
    w.write_record(["r", "s", "exact", "reconstructed", "rel_err"])?;
    for (e, a) in exact.iter().zip(&approx) {
        let (x, y) = (e.hopping.0, a.hopping.0);
        w.write_record([e.r.to_string(), e.s.to_string(), num(x), num(y), num(((y - x) / x).abs())])?;
    }
    w.flush()?;
    Ok(traj.converged())
}
