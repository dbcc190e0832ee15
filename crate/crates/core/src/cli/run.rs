use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::{json, Value};

use super::{parse_preset, Command, Formulation, RunSpec};
use crate::coercivity::{coercivity_random_audit, coercivity_scan, stability_condition};
use crate::error::{Error, Result};
use crate::generator::assemble;
use crate::grid::GridSpec;
use crate::snapshot::Snapshot;
use crate::spectral::{
    conjugate_mismatch, eigenvalues, log_spaced_b, resolvent_scan, spectral_abscissa, spectral_radius, stability_sweep,
};
use crate::timestepper::{dissipation_audit, fit_decay_from, simulate, simulate_history, SimulationOptions};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Io = 1,
    Validation = 2,
    Numerical = 3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub status: ExitStatus,
    pub message: Option<String>,
}

impl RunOutcome {
    fn fail(status: ExitStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: Some(message.into()),
        }
    }
}

/// Relative tolerance used by the dissipation audit.
const AUDIT_TOL: f64 = 1e-10;

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

fn prepare_out_dir(out: &Path, force: bool) -> std::result::Result<(), RunOutcome> {
    match fs::read_dir(out) {
        Ok(mut entries) => {
            if entries.next().is_some() && !force {
                return Err(RunOutcome::fail(
                    ExitStatus::Validation,
                    format!("output directory {} is not empty (use --force)", out.display()),
                ));
            }
            Ok(())
        }
        Err(_) => fs::create_dir_all(out).map_err(|e| RunOutcome::fail(ExitStatus::Io, e.to_string())),
    }
}

fn classify(e: &Error) -> ExitStatus {
    match e {
        e if e.is_numerical() => ExitStatus::Numerical,
        Error::Io(_) | Error::Json(_) => ExitStatus::Io,
        _ => ExitStatus::Validation,
    }
}

/// Runs a validated spec, writing `run_spec.json`, `summary.json` and the
/// command's artifacts into `out`.
pub fn run(spec: &RunSpec, out: &Path, force: bool) -> RunOutcome {
    if let Err(outcome) = prepare_out_dir(out, force) {
        return outcome;
    }
    if let Err(e) = write_json(&out.join("run_spec.json"), spec) {
        return RunOutcome::fail(ExitStatus::Io, e.to_string());
    }
    let result = match spec.command {
        Command::Simulate => run_simulate(spec, out),
        Command::Spectrum => run_spectrum(spec, out),
        Command::Resolvent => run_resolvent(spec, out),
        Command::Coercivity => run_coercivity(spec),
        Command::Sweep => run_sweep(spec, out),
        Command::DissipationAudit => run_audit(spec),
    };
    let (mut summary, outcome) = match result {
        Ok(summary) => (
            summary,
            RunOutcome {
                status: ExitStatus::Success,
                message: None,
            },
        ),
        Err(e) => (
            json!({ "status": "failed", "error": e.to_string() }),
            RunOutcome::fail(classify(&e), e.to_string()),
        ),
    };
    summary["command"] = json!(spec.command.name());
    if summary.get("status").is_none() {
        summary["status"] = json!("ok");
    }
    match write_json(&out.join("summary.json"), &summary) {
        Ok(()) => outcome,
        Err(e) if outcome.status == ExitStatus::Success => RunOutcome::fail(ExitStatus::Io, e.to_string()),
        Err(_) => outcome,
    }
}

fn grid(spec: &RunSpec) -> Result<GridSpec> {
    GridSpec::new(spec.grid.n_cells, spec.grid.n_rho, spec.params.ell)
}

fn run_simulate(spec: &RunSpec, out: &Path) -> Result<Value> {
    let s = &spec.simulate;
    let p = &spec.params;
    let g = grid(spec)?;
    let init = parse_preset(&s.preset, s.custom.as_ref()).map_err(|e| Error::param("preset", e))?;
    let opts = SimulationOptions {
        t_final: s.t_final,
        dt: s.dt,
        scheme: s.scheme,
        sample_stride: s.sample_stride,
        keep_states: !s.snapshot_times.is_empty(),
    };
    let traj = match s.formulation {
        Formulation::Transport => simulate(p, &g, spec.theta_bc, &init, &opts)?,
        Formulation::History => simulate_history(p, &g, spec.theta_bc, &init, &opts)?,
    };
    write_csv(
        &out.join("energy.csv"),
        "t,E,sqrtE",
        traj.times
            .iter()
            .zip(&traj.energies)
            .map(|(&t, &e)| format!("{},{},{}", fmt(t), fmt(e), fmt(e.sqrt()))),
    )?;
    let mut snapshots = Vec::new();
    for &t in &s.snapshot_times {
        let i = traj
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let name = format!("snapshot_{:06}.{}", i, s.snapshot_format.extension());
        let w = BufWriter::new(File::create(out.join(&name))?);
        Snapshot::new(&traj.states[i], &g, traj.times[i])?.write(w, s.snapshot_format)?;
        snapshots.push(json!({ "requested": t, "time": traj.times[i], "file": name }));
    }
    let e0 = traj.energies[0];
    let e_final = *traj.energies.last().unwrap_or(&0.0);
    let skip = 10usize.div_ceil(s.sample_stride);
    let mut summary = json!({
        "steps": opts.steps()?,
        "t_end": traj.times.last(),
        "energy_initial": e0,
        "energy_final": e_final,
        "energy_ratio": if e0 > 0.0 { e_final / e0 } else { 0.0 },
        "max_relative_uptick": traj.max_relative_uptick(skip),
        "snapshots": snapshots,
    });
    match fit_decay_from(&traj, s.fit_start) {
        Ok(fit) => {
            summary["w_fit"] = json!(fit.w_fit);
            summary["c_fit"] = json!(fit.c_fit);
            summary["r_squared"] = json!(fit.r_squared);
            summary["fit_window"] = json!([fit.window.0, fit.window.1]);
        }
        Err(e) => summary["fit_error"] = json!(e.to_string()),
    }
    Ok(summary)
}

fn run_spectrum(spec: &RunSpec, out: &Path) -> Result<Value> {
    let g = grid(spec)?;
    let a = assemble(&spec.params, &g, spec.theta_bc)?;
    if spec.spectrum.dump_matrix {
        let w = BufWriter::new(File::create(out.join("matrix.txt"))?);
        a.write_coordinate(w)?;
    }
    let mut eigs = eigenvalues(&a)?;
    eigs.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    write_csv(
        &out.join("spectrum.csv"),
        "re,im",
        eigs.iter().map(|z| format!("{},{}", fmt(z.re), fmt(z.im))),
    )?;
    let radius = spectral_radius(&eigs);
    let report = spectral_abscissa(&eigs, spec.spectrum.deflate, spec.spectrum.zero_tol_factor * radius)?;
    Ok(json!({
        "dim": a.dim(),
        "abscissa": report.abscissa,
        "zero_modes_removed": report.zero_modes_removed,
        "removed": report.removed.map(|z| [z.re, z.im]),
        "zero_tol": report.zero_tol,
        "spectral_radius": radius,
        "conjugate_mismatch": conjugate_mismatch(&eigs),
        "stability_condition": stability_condition(&spec.params),
    }))
}

fn run_resolvent(spec: &RunSpec, out: &Path) -> Result<Value> {
    let r = &spec.resolvent;
    let g = grid(spec)?;
    let a = assemble(&spec.params, &g, spec.theta_bc)?;
    let bs = log_spaced_b(r.b_min, r.b_max, r.b_count, r.symmetric)?;
    let scan = resolvent_scan(&a, r.s, &bs)?;
    write_csv(
        &out.join("resolvent_scan.csv"),
        "b,norm_euclid,norm_H",
        scan.samples.iter().map(|smp| match smp.norm {
            Some(n) => format!("{},{},{}", fmt(smp.b), fmt(n.euclid), fmt(n.weighted)),
            None => format!("{},inf,inf", fmt(smp.b)),
        }),
    )?;
    let singular = scan.samples.iter().filter(|s| s.singular).count();
    Ok(json!({
        "line_real_part": scan.line_real_part,
        "samples": scan.samples.len(),
        "singular_samples": singular,
        "sup_resolvent_norm": scan.sup_norm,
        "sup_resolvent_norm_euclid": scan.sup_norm_euclid,
        "argmax_b": scan.argmax_b,
    }))
}

fn run_coercivity(spec: &RunSpec) -> Result<Value> {
    let c = &spec.coercivity;
    let report = coercivity_scan(&spec.params, (c.a_min, c.a_max), (c.b_min, c.b_max), c.n_a, c.n_b)?;
    let mut summary = json!({
        "min_coercivity": report.min_value,
        "argmin": [report.argmin.a, report.argmin.b],
        "samples": report.samples,
        "nonpositive": report.nonpositive.len(),
        "stability_condition": stability_condition(&spec.params),
    });
    if c.random_samples > 0 {
        let seed = spec
            .seed
            .ok_or_else(|| Error::param("seed", "required for random sampling"))?;
        summary["random_audit"] = serde_json::to_value(coercivity_random_audit(c.random_samples, seed))?;
    }
    Ok(summary)
}

fn run_sweep(spec: &RunSpec, out: &Path) -> Result<Value> {
    let axis = spec
        .sweep
        .axis
        .as_ref()
        .ok_or_else(|| Error::param("axis", "missing sweep axis"))?;
    let rows = stability_sweep(
        &spec.params,
        axis.param,
        &axis.values,
        spec.grid.n_cells,
        spec.grid.n_rho,
        spec.theta_bc,
        spec.sweep.deflate,
    )?;
    let name = axis.param.name();
    write_csv(
        &out.join("sweep.csv"),
        "param,value,abscissa,stability_condition,status",
        rows.iter().map(|r| {
            format!(
                "{name},{},{},{},{}",
                fmt(r.value),
                r.abscissa.map_or_else(|| "nan".to_string(), fmt),
                r.stability_condition,
                r.status.replace(',', ";")
            )
        }),
    )?;
    let failed = rows.iter().filter(|r| r.abscissa.is_none()).count();
    let max_abscissa = rows.iter().filter_map(|r| r.abscissa).fold(f64::NEG_INFINITY, f64::max);
    Ok(json!({
        "param": name,
        "rows": rows.len(),
        "failed_rows": failed,
        "max_abscissa": if failed == rows.len() { None } else { Some(max_abscissa) },
    }))
}

fn run_audit(spec: &RunSpec) -> Result<Value> {
    let seed = spec
        .seed
        .ok_or_else(|| Error::param("seed", "required for dissipation-audit"))?;
    let g = grid(spec)?;
    let a = assemble(&spec.params, &g, spec.theta_bc)?;
    let audit = dissipation_audit(&a, spec.audit.samples, seed, AUDIT_TOL)?;
    Ok(json!({
        "samples": audit.samples,
        "max_dissipation_residual": audit.max_scaled_residual,
        "violations": audit.violations,
        "tol": audit.tol,
        "m": spec.params.m(),
        "xi": spec.params.xi(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::parse_config;
    use serde_json::json;

    fn spec(command: &str, extra: &[(&str, Value)]) -> RunSpec {
        let mut overrides = vec![
            ("command".to_string(), json!(command)),
            ("grid.n_cells".to_string(), json!(8)),
            ("grid.n_rho".to_string(), json!(4)),
        ];
        overrides.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        parse_config(None, &overrides).unwrap()
    }

    fn summary(dir: &Path) -> Value {
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
    }

    #[test]
    fn refuses_nonempty_dir_without_force() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("keep.txt"), "x").unwrap();
        let s = spec(
            "coercivity",
            &[("coercivity.n_a", json!(4)), ("coercivity.n_b", json!(5))],
        );
        assert_eq!(run(&s, dir.path(), false).status, ExitStatus::Validation);
        assert_eq!(run(&s, dir.path(), true).status, ExitStatus::Success);
    }

    #[test]
    fn coercivity_summary() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec(
            "coercivity",
            &[("coercivity.n_a", json!(20)), ("coercivity.n_b", json!(41))],
        );
        assert_eq!(run(&s, dir.path(), false).status, ExitStatus::Success);
        let v = summary(dir.path());
        assert!(v["min_coercivity"].as_f64().unwrap() > 0.0);
        assert_eq!(v["status"], "ok");
    }

    #[test]
    fn spectrum_and_matrix_dump() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec("spectrum", &[("spectrum.dump_matrix", json!(true))]);
        assert_eq!(run(&s, dir.path(), false).status, ExitStatus::Success);
        let v = summary(dir.path());
        assert!(v["abscissa"].as_f64().unwrap() < 0.0);
        assert_eq!(v["zero_modes_removed"], 1);
        let csv = fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 * 7 + 8 * 4 + 8);
        assert!(dir.path().join("matrix.txt").exists());
    }

    #[test]
    fn simulate_writes_energy_and_snapshots() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec(
            "simulate",
            &[
                ("simulate.t_final", json!(1.0)),
                ("simulate.dt", json!(0.01)),
                ("simulate.sample_stride", json!(2)),
                ("simulate.snapshot_times", json!([0.0, 0.5])),
                ("simulate.snapshot_format", json!("binary")),
            ],
        );
        assert_eq!(run(&s, dir.path(), false).status, ExitStatus::Success);
        let csv = fs::read_to_string(dir.path().join("energy.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 51);
        let v = summary(dir.path());
        assert!(v["w_fit"].as_f64().is_some());
        let file = v["snapshots"][1]["file"].as_str().unwrap();
        let snap = Snapshot::read(
            File::open(dir.path().join(file)).unwrap(),
            crate::snapshot::SnapshotFormat::Binary,
        )
        .unwrap();
        assert_eq!(snap.time, 0.5);
    }

    #[test]
    fn sweep_and_audit() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec(
            "sweep",
            &[("sweep.axis", json!({"param": "ratio", "values": [4.0, 1.0, 2.0]}))],
        );
        assert_eq!(run(&s, dir.path(), false).status, ExitStatus::Success);
        let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        let values: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
        assert_eq!(values, vec![fmt(1.0), fmt(2.0), fmt(4.0)]);

        let dir = tempfile::tempdir().unwrap();
        let s = spec("dissipation-audit", &[("seed", json!(3)), ("audit.samples", json!(50))]);
        assert_eq!(run(&s, dir.path(), false).status, ExitStatus::Success);
        assert_eq!(summary(dir.path())["violations"], 0);
    }

    #[test]
    fn numerical_failure_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec("spectrum", &[("spectrum.zero_tol_factor", json!(10.0))]);
        let outcome = run(&s, dir.path(), false);
        assert_eq!(outcome.status, ExitStatus::Numerical);
        let v = summary(dir.path());
        assert_eq!(v["status"], "failed");
        assert!(dir.path().join("run_spec.json").exists());
    }
}
