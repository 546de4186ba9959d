pub mod anderson;
pub mod decay;
pub mod diffusion;
pub mod moment;
pub mod relax;
pub mod solve;
pub mod uu;

use qkin::io::csv_row;

/// CSV text with a header row and 17-digit values.
pub fn table(header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        csv_row(&mut out, &r);
    }
    out
}

pub fn names(fixed: &[&str]) -> Vec<String> {
    fixed.iter().map(|s| s.to_string()).collect()
}

pub fn momentum_names(prefix: &str, dim: usize) -> Vec<String> {
    (1..=dim).map(|a| format!("{prefix}{a}")).collect()
}

/// Implements the shared accessors of [`crate::config::RunConfig`]; the
/// struct must have `seed`, `threads` and `output_dir` fields.
macro_rules! run_config_fields {
    () => {
        fn seed_mut(&mut self) -> &mut u64 {
            &mut self.seed
        }

        fn threads(&self) -> Option<usize> {
            self.threads
        }

        fn output_dir(&self) -> Option<&std::path::Path> {
            self.output_dir.as_deref()
        }
    };
}
pub(crate) use run_config_fields;
