use std::path::PathBuf;

use qkin::transport::{diffusion_eta_ladder, msd_diffusion, EtaLadderReport, MsdConfig, ShellGenerator};
use serde::{Deserialize, Serialize};

use super::{momentum_names, names, run_config_fields, table};
use crate::config::{at_least, momentum_grid, positive, Eta, ModelName, Profile, RunConfig};
use crate::error::{CliError, FieldContext};
use crate::output::{gnuplot, Output};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelName,
    pub dim: usize,
    pub gap: f64,
    pub grid: usize,
    pub half_width: f64,
    pub energy: f64,
    pub spectrum: Profile,
    pub eta: Eta,
    /// Mean-square-displacement experiment; skipped when absent.
    pub msd: Option<MsdConfig>,
    /// Also report `D` at two smearing widths and their extrapolation.
    pub eta_ladder: bool,
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
            grid: 12,
            half_width: 6.0,
            energy: 3.0,
            spectrum: Profile::Constant { value: 1.0 },
            eta: Eta::Auto,
            msd: Some(MsdConfig::default()),
            eta_ladder: false,
            seed: 0,
            threads: None,
            output_dir: None,
        }
    }
}

impl RunConfig for Config {
    run_config_fields!();

    fn validate(&self) -> Result<(), CliError> {
        at_least("grid", self.grid, 2)?;
        positive("half_width", self.half_width)?;
        if !self.energy.is_finite() {
            return Err(CliError::field("energy", "must be finite"));
        }
        self.model.build(self.dim, self.gap).map(|_| ())
    }
}

#[derive(Serialize)]
struct Msd {
    d_msd: f64,
    slopes: Vec<f64>,
    /// `sum(slopes) / (2 d D_CE)`.
    slope_ratio: f64,
    fit_window: (f64, f64),
}

#[derive(Serialize)]
struct Report {
    energy: f64,
    eta: f64,
    active_nodes: usize,
    shell_mass: f64,
    gap: f64,
    lambda_max: f64,
    d_chapman_enskog: f64,
    d_green_kubo: f64,
    green_kubo_tail: f64,
    msd: Option<Msd>,
    /// Largest pairwise relative difference among the available estimates.
    max_relative_difference: f64,
    eta_ladder: Option<EtaLadderReport>,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

pub fn run(cfg: &Config, out: &mut Output) -> Result<String, CliError> {
    let model = cfg.model.build(cfg.dim, cfg.gap)?;
    let grid = momentum_grid(&model, cfg.grid, cfg.half_width)?;
    let eta = cfg.eta.resolve(&grid, &model, cfg.energy)?;
    let spectrum = cfg.spectrum.spectrum();
    let gen = ShellGenerator::new(grid.clone(), &model, &spectrum, cfg.energy, eta).field("energy")?;
    let ce = gen.chapman_enskog();
    let gk = gen.green_kubo();
    out.write(
        "velocity_correlation.csv",
        table(
            &names(&["t", "correlation"]),
            gk.times.iter().zip(&gk.correlation).map(|(t, c)| vec![*t, *c]),
        )
        .as_bytes(),
    )?;
    out.write(
        "velocity_correlation.gp",
        gnuplot("velocity_correlation.csv", "velocity autocorrelation", "t", "C(t)", &[(2, "C(t)")], "y")
            .as_bytes(),
    )?;
    let mut estimates = vec![ce, gk.integral];
    let msd = match &cfg.msd {
        None => None,
        Some(mc) => {
            let r = msd_diffusion(&gen, mc).map_err(|e| match e {
                qkin::QkinError::InvalidParameter(_) => CliError::field("msd", e),
                other => out.numerical(other),
            })?;
            let mut header = names(&["t"]);
            header.extend(momentum_names("variance", r.variances.len()));
            out.write(
                "msd.csv",
                table(&header, r.times.iter().enumerate().map(|(i, t)| {
                    let mut row = vec![*t];
                    row.extend(r.variances.iter().map(|v| v[i]));
                    row
                }))
                .as_bytes(),
            )?;
            let cols: Vec<(usize, String)> = (0..r.variances.len()).map(|a| (a + 2, format!("axis {}", a + 1))).collect();
            let cols: Vec<(usize, &str)> = cols.iter().map(|(c, s)| (*c, s.as_str())).collect();
            out.write("msd.gp", gnuplot("msd.csv", "mean square displacement", "t", "variance", &cols, "").as_bytes())?;
            estimates.push(r.d_msd);
            Some(Msd {
                d_msd: r.d_msd,
                slope_ratio: r.slopes.iter().sum::<f64>() / (2.0 * cfg.dim as f64 * ce),
                slopes: r.slopes,
                fit_window: r.fit_window,
            })
        }
    };
    let mut max_rel: f64 = 0.0;
    for i in 0..estimates.len() {
        for j in i + 1..estimates.len() {
            max_rel = max_rel.max(rel(estimates[i], estimates[j]));
        }
    }
    let eta_ladder = if cfg.eta_ladder {
        Some(diffusion_eta_ladder(grid, &model, &spectrum, cfg.energy).field("eta_ladder")?)
    } else {
        None
    };
    let report = Report {
        energy: cfg.energy,
        eta,
        active_nodes: gen.active().len(),
        shell_mass: gen.shell_mass(),
        gap: gen.gap(),
        lambda_max: gen.lambda_max(),
        d_chapman_enskog: ce,
        d_green_kubo: gk.integral,
        green_kubo_tail: gk.tail,
        msd,
        max_relative_difference: max_rel,
        eta_ladder,
    };
    out.write_json("report.json", &report)?;
    let mut msg = format!("D_CE {ce:.6}, D_GK {:.6}", gk.integral);
    if let Some(m) = &report.msd {
        msg.push_str(&format!(", D_MSD {:.6}", m.d_msd));
    }
    msg.push_str(&format!(", max relative difference {max_rel:.2e}"));
    Ok(msg)
}
