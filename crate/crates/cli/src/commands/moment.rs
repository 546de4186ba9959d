use std::path::PathBuf;

use num_complex::Complex64;
use qkin::quasifree::{quasifree_moment, CorrelationMatrix, PERMANENT_CAP};
use qkin::Statistics;
use serde::{Deserialize, Serialize};

use super::{names, run_config_fields, table};
use crate::config::RunConfig;
use crate::error::{CliError, FieldContext};
use crate::output::Output;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub statistics: Statistics,
    /// Real part of the Hermitian two-point matrix, by rows.
    pub real: Vec<Vec<f64>>,
    /// Imaginary part; zero when absent.
    pub imag: Option<Vec<Vec<f64>>>,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            statistics: Statistics::Fermion,
            real: vec![vec![0.6, 0.2, 0.0], vec![0.2, 0.5, 0.1], vec![0.0, 0.1, 0.3]],
            imag: None,
            seed: 0,
            threads: None,
            output_dir: None,
        }
    }
}

impl Config {
    fn entries(&self) -> Result<(usize, Vec<Complex64>), CliError> {
        let m = self.real.len();
        let square = |rows: &Vec<Vec<f64>>| rows.len() == m && rows.iter().all(|r| r.len() == m);
        if m == 0 || !square(&self.real) {
            return Err(CliError::field("real", "must be a non-empty square matrix"));
        }
        if let Some(im) = &self.imag {
            if !square(im) {
                return Err(CliError::field("imag", format!("must be {m}x{m} like `real`")));
            }
        }
        let mut data = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                let im = self.imag.as_ref().map_or(0.0, |v| v[i][j]);
                data.push(Complex64::new(self.real[i][j], im));
            }
        }
        Ok((m, data))
    }
}

impl RunConfig for Config {
    run_config_fields!();

    fn validate(&self) -> Result<(), CliError> {
        let (m, data) = self.entries()?;
        if self.statistics == Statistics::Boson && m > PERMANENT_CAP {
            return Err(CliError::field(
                "real",
                format!("permanents are limited to {PERMANENT_CAP}x{PERMANENT_CAP}"),
            ));
        }
        CorrelationMatrix::new(m, data, self.statistics).field("real").map(|_| ())
    }
}

#[derive(Serialize)]
struct Report {
    statistics: Statistics,
    m: usize,
    method: &'static str,
    moment: [f64; 2],
}

pub fn run(cfg: &Config, out: &mut Output) -> Result<String, CliError> {
    let (m, data) = cfg.entries()?;
    let c = CorrelationMatrix::new(m, data.clone(), cfg.statistics).field("real")?;
    let z = quasifree_moment(&c).map_err(|e| out.numerical(e))?;
    let rows = (0..m * m).map(|n| vec![(n / m) as f64, (n % m) as f64, data[n].re, data[n].im]);
    out.write("matrix.csv", table(&names(&["i", "j", "re", "im"]), rows).as_bytes())?;
    let report = Report {
        statistics: cfg.statistics,
        m,
        method: if cfg.statistics == Statistics::Boson { "permanent" } else { "determinant" },
        moment: [z.re, z.im],
    };
    out.write_json("report.json", &report)?;
    Ok(format!("{} = {} {:+}i", report.method, z.re, z.im))
}
