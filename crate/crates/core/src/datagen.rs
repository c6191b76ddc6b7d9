//! Sweeping the costate grid into a supervised dataset of optimal commands.
//!
//! Cell `(i, j)` uses `alpha = i * alpha_bar / n_i` and `beta = j * pi / n_j`
//! for `i = 1..=n_i`, `j = 1..=n_j`. Every grid time `t = k h` strictly before
//! the cell's terminal time contributes one `(r, sigma, t_go, u)` record in
//! unit-speed units.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pmp::{propagate_param, AdjointParams};
use crate::{Error, Result};

pub const DATASET_HEADER: &str = "r,sigma,t_go,u";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatagenConfig {
    pub alpha_bar: f64,
    pub n_i: usize,
    pub n_j: usize,
    pub t_bar: f64,
    pub h: f64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            alpha_bar: 10.0,
            n_i: 100,
            n_j: 100,
            t_bar: 10.0,
            h: 0.005,
        }
    }
}

impl DatagenConfig {
    /// The reduced grid used for quick training runs.
    pub fn reduced() -> Self {
        Self {
            n_i: 40,
            n_j: 40,
            t_bar: 4.0,
            h: 0.01,
            alpha_bar: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} = {v} must be positive")))
            }
        };
        positive("alpha_bar", self.alpha_bar)?;
        positive("t_bar", self.t_bar)?;
        positive("h", self.h)?;
        if self.n_i == 0 || self.n_j == 0 {
            return Err(Error::InvalidConfig("grid counts must be positive".into()));
        }
        Ok(())
    }

    pub fn params(&self, i: usize, j: usize) -> AdjointParams {
        AdjointParams {
            alpha: i as f64 * self.alpha_bar / self.n_i as f64,
            beta: j as f64 * PI / self.n_j as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub r: f64,
    pub sigma: f64,
    pub t_go: f64,
    pub u: f64,
}

/// Samples contributed by one grid cell.
#[derive(Debug, Clone)]
pub struct CellData {
    pub i: usize,
    pub j: usize,
    pub params: AdjointParams,
    pub terminal_time: f64,
    pub samples: Vec<Sample>,
}

/// Propagate every cell of the grid. Cells come back ordered by `(i, j)`.
pub fn generate_cells(config: &DatagenConfig) -> Result<Vec<CellData>> {
    config.validate()?;
    let cells: Vec<(usize, usize)> = (1..=config.n_i)
        .flat_map(|i| (1..=config.n_j).map(move |j| (i, j)))
        .collect();
    cells
        .into_par_iter()
        .map(|(i, j)| {
            let params = config.params(i, j);
            let traj = propagate_param(params, config.t_bar, config.h)?;
            let samples = traj
                .samples
                .iter()
                .skip(1)
                .filter_map(|s| {
                    s.look_angle.map(|sigma| Sample {
                        r: s.range,
                        sigma,
                        t_go: s.t,
                        u: s.command,
                    })
                })
                .collect();
            Ok(CellData {
                i,
                j,
                params,
                terminal_time: traj.terminal_time,
                samples,
            })
        })
        .collect()
}

/// The dataset ordered by `(i, j, t)`.
pub fn generate_dataset(config: &DatagenConfig) -> Result<Vec<Sample>> {
    let cells = generate_cells(config)?;
    let total = cells.iter().map(|c| c.samples.len()).sum();
    let mut out = Vec::with_capacity(total);
    for cell in cells {
        out.extend(cell.samples);
    }
    Ok(out)
}

pub fn write_dataset_to<W: Write>(samples: &[Sample], mut w: W) -> Result<()> {
    writeln!(w, "{DATASET_HEADER}")?;
    for s in samples {
        writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", s.r, s.sigma, s.t_go, s.u)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(samples: &[Sample], path: &Path) -> Result<()> {
    write_dataset_to(samples, BufWriter::new(File::create(path)?))
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    let reader = BufReader::new(File::open(path)?);
    let malformed = |line: usize, message: String| Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 {
            if line != DATASET_HEADER {
                return Err(malformed(lineno, format!("expected header {DATASET_HEADER:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut vals = [0.0; 4];
        let mut fields = line.split(',');
        for v in vals.iter_mut() {
            let field = fields
                .next()
                .ok_or_else(|| malformed(lineno, "expected 4 fields".into()))?;
            *v = field
                .parse()
                .map_err(|e| malformed(lineno, format!("bad number {field:?}: {e}")))?;
        }
        if fields.next().is_some() {
            return Err(malformed(lineno, "expected 4 fields".into()));
        }
        let [r, sigma, t_go, u] = vals;
        samples.push(Sample { r, sigma, t_go, u });
    }
    if samples.is_empty() && std::fs::metadata(path)?.len() == 0 {
        return Err(malformed(1, "missing header".into()));
    }
    Ok(samples)
}
