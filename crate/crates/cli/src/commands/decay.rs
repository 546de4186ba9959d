use std::path::PathBuf;

use qkin::propagator_decay;
use serde::{Deserialize, Serialize};

use super::{names, run_config_fields, table};
use crate::config::{at_least, positive, ModelName, RunConfig};
use crate::error::CliError;
use crate::output::{gnuplot, Output};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelName,
    pub dim: usize,
    /// Optical gap; ignored by the other models.
    pub gap: f64,
    pub tmax: f64,
    pub n_t: usize,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            model: ModelName::Lattice,
            dim: 3,
            gap: 1.0,
            tmax: 200.0,
            n_t: 801,
            seed: 0,
            threads: None,
            output_dir: None,
        }
    }
}

impl RunConfig for Config {
    run_config_fields!();

    fn validate(&self) -> Result<(), CliError> {
        positive("tmax", self.tmax)?;
        at_least("n_t", self.n_t, 2)?;
        self.model.build(self.dim, self.gap).map(|_| ())
    }
}

#[derive(Serialize)]
struct Report {
    model: ModelName,
    dim: usize,
    exponent: f64,
    exponent_stderr: f64,
    expected_exponent: f64,
    fit_window: (f64, f64),
    fit_unreliable: bool,
    nodes_per_axis: usize,
}

pub fn run(cfg: &Config, out: &mut Output) -> Result<String, CliError> {
    let model = cfg.model.build(cfg.dim, cfg.gap)?;
    let r = propagator_decay(&model, cfg.tmax, cfg.n_t).map_err(|e| out.numerical(e))?;
    let rows = (0..r.times.len()).map(|i| vec![r.times[i], r.amplitude[i], r.running_integral[i]]);
    out.write("decay.csv", table(&names(&["t", "amplitude", "running_integral"]), rows).as_bytes())?;
    out.write(
        "decay.gp",
        gnuplot("decay.csv", "propagator decay", "t", "|a(t)|", &[(2, "amplitude")], "xy").as_bytes(),
    )?;
    let report = Report {
        model: cfg.model,
        dim: cfg.dim,
        exponent: r.exponent,
        exponent_stderr: r.exponent_stderr,
        expected_exponent: cfg.dim as f64 / 2.0,
        fit_window: r.fit_window,
        fit_unreliable: r.fit_unreliable,
        nodes_per_axis: r.nodes_per_axis,
    };
    out.write_json("report.json", &report)?;
    let mut msg = format!(
        "decay exponent {:.4} +/- {:.4} (d/2 = {})",
        r.exponent,
        r.exponent_stderr,
        report.expected_exponent
    );
    if r.fit_unreliable {
        msg.push_str("; warning: fit window shorter than one decade");
    }
    Ok(msg)
}
