use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use thermodelay::cli::{parse_axis, parse_config, run, ExitStatus};
use thermodelay::timestepper::Scheme;
use thermodelay::ThetaBc;

#[derive(Parser)]
#[command(
    name = "thermodelay",
    version,
    about = "Delayed thermoelastic rod: spectra, resolvents and decay"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate an initial value problem and fit the energy decay.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long = "T")]
        t_final: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        scheme: Option<Scheme>,
        /// `sine_mode:K`, `random_smooth:SEED` or `custom`.
        #[arg(long)]
        preset: Option<String>,
        /// `transport` or `history`.
        #[arg(long)]
        formulation: Option<String>,
        #[arg(long)]
        sample_stride: Option<usize>,
        #[arg(long)]
        fit_start: Option<f64>,
    },
    /// Eigenvalues of the discrete generator.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dump_matrix: bool,
        #[arg(long)]
        no_deflate: bool,
    },
    /// Resolvent norms along the line `Re λ = s`.
    Resolvent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        b_min: Option<f64>,
        #[arg(long)]
        b_max: Option<f64>,
        #[arg(long)]
        b_count: Option<usize>,
    },
    /// Minimum of the coercivity function over a frequency box.
    Coercivity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        random_samples: Option<usize>,
    },
    /// Spectral abscissa along one parameter axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `name=v1,v2,...` or `name=start:stop:count`.
        #[arg(long)]
        axis: Option<String>,
    },
    /// Check the energy inequality on random states.
    DissipationAudit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run specification.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "N")]
    n_cells: Option<usize>,
    #[arg(long = "M")]
    n_rho: Option<usize>,
    #[arg(long)]
    theta_bc: Option<ThetaBc>,
}

struct Overrides(Vec<(String, Value)>);

impl Overrides {
    fn set(&mut self, key: &str, value: Option<impl Into<Value>>) {
        if let Some(v) = value {
            self.0.push((key.to_string(), v.into()));
        }
    }
}

fn collect(cmd: Cmd) -> Result<(Common, Overrides), String> {
    let mut o = Overrides(Vec::new());
    let common = match cmd {
        Cmd::Simulate {
            common,
            t_final,
            dt,
            scheme,
            preset,
            formulation,
            sample_stride,
            fit_start,
        } => {
            o.set("command", Some("simulate"));
            o.set("simulate.t_final", t_final);
            o.set("simulate.dt", dt);
            o.set("simulate.scheme", scheme.map(|s| json!(s)));
            o.set("simulate.preset", preset);
            o.set("simulate.formulation", formulation);
            o.set("simulate.sample_stride", sample_stride);
            o.set("simulate.fit_start", fit_start);
            common
        }
        Cmd::Spectrum {
            common,
            dump_matrix,
            no_deflate,
        } => {
            o.set("command", Some("spectrum"));
            o.set("spectrum.dump_matrix", dump_matrix.then_some(true));
            o.set("spectrum.deflate", no_deflate.then_some(false));
            common
        }
        Cmd::Resolvent {
            common,
            s,
            b_min,
            b_max,
            b_count,
        } => {
            o.set("command", Some("resolvent"));
            o.set("resolvent.s", s);
            o.set("resolvent.b_min", b_min);
            o.set("resolvent.b_max", b_max);
            o.set("resolvent.b_count", b_count);
            common
        }
        Cmd::Coercivity { common, random_samples } => {
            o.set("command", Some("coercivity"));
            o.set("coercivity.random_samples", random_samples);
            common
        }
        Cmd::Sweep { common, axis } => {
            o.set("command", Some("sweep"));
            if let Some(text) = axis {
                let axis = parse_axis(&text).map_err(|e| format!("--axis: {e}"))?;
                o.set("sweep.axis", Some(json!(axis)));
            }
            common
        }
        Cmd::DissipationAudit { common, samples } => {
            o.set("command", Some("dissipation-audit"));
            o.set("audit.samples", samples);
            common
        }
    };
    o.set("seed", common.seed);
    o.set("grid.n_cells", common.n_cells);
    o.set("grid.n_rho", common.n_rho);
    o.set("theta_bc", common.theta_bc.map(|b| json!(b)));
    Ok((common, o))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let validation = ExitCode::from(ExitStatus::Validation as u8);
    let (common, overrides) = match collect(cli.command) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return validation;
        }
    };
    let text = match &common.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => Some(t),
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return validation;
            }
        },
        None => None,
    };
    let spec = match parse_config(text.as_deref(), &overrides.0) {
        Ok(spec) => spec,
        Err(errors) => {
            for e in &errors.0 {
                eprintln!("error: {e}");
            }
            return validation;
        }
    };
    let outcome = run(&spec, &common.out, common.force);
    if let Some(message) = &outcome.message {
        eprintln!("error: {message}");
    }
    ExitCode::from(outcome.status as u8)
}
