//! Reference solvers, random initial conditions and coefficient fields, and
//! the dataset container.
//!
//! Every trajectory is solved on a grid `fine_factor` times finer than the
//! stored one and then coarsened.

mod burgers;
mod darcy;
mod diffsorp;
pub(crate) mod format;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

pub use burgers::{draw_waves, eval_waves, gen_burgers_ic, solve_burgers, Wave, MAX_COURANT};
pub use darcy::{darcy_energy, gen_darcy_coefficient, solve_darcy, HIGH_PERMEABILITY, LOW_PERMEABILITY};
pub use diffsorp::{gen_diffsorp_ic, retardation, solve_diffsorp, RETARDATION_FLOOR};
pub use format::{dataset_from_bytes, dataset_to_bytes, read_dataset, write_dataset, DATASET_MAGIC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pde {
    Burgers,
    DiffSorp,
    Darcy,
}

impl Pde {
    /// Periodic spatial domain.
    pub fn periodic(self) -> bool {
        self == Pde::Burgers
    }
}

impl fmt::Display for Pde {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pde::Burgers => "burgers",
            Pde::DiffSorp => "diffsorp",
            Pde::Darcy => "darcy",
        })
    }
}

impl FromStr for Pde {
    type Err = Error;
    fn from_str(s: &str) -> Result<Pde> {
        match s {
            "burgers" => Ok(Pde::Burgers),
            "diffsorp" => Ok(Pde::DiffSorp),
            "darcy" => Ok(Pde::Darcy),
            _ => Err(config_err!("unknown pde {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub pde: Pde,
    /// Stored spatial points per axis.
    pub nx: usize,
    /// Stored snapshots (1 for Darcy).
    pub nt: usize,
    pub t_final: f64,
    pub fine_factor: usize,
    /// Burgers viscosity; the diffusion coefficient is `nu / pi`.
    pub nu: f64,
    /// Diffusion-sorption coefficient `D`.
    pub diffusion: f64,
    /// Sinusoids in a Burgers initial condition.
    pub n_waves: usize,
    /// Target Courant number for adaptive Burgers steps.
    pub cfl: f64,
    /// Fixed Burgers step; rejected if it breaks the Courant limit.
    pub dt: Option<f64>,
    /// Implicit diffusion-sorption steps per stored interval.
    pub substeps: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl SolverConfig {
    pub fn new(pde: Pde, nx: usize) -> SolverConfig {
        let base = SolverConfig {
            pde,
            nx,
            nt: 41,
            t_final: 2.0,
            fine_factor: 4,
            nu: 0.001,
            diffusion: 0.0005,
            n_waves: 2,
            cfl: 0.4,
            dt: None,
            substeps: 20,
            cg_tol: 1e-8,
            cg_max_iter: 20_000,
        };
        match pde {
            Pde::Burgers => base,
            Pde::DiffSorp => SolverConfig { nt: 101, t_final: 500.0, ..base },
            Pde::Darcy => SolverConfig { nt: 1, t_final: 0.0, fine_factor: 2, ..base },
        }
    }

    fn fine_points(&self) -> usize {
        match self.pde {
            Pde::Darcy => (self.nx - 1) * self.fine_factor.max(1) + 1,
            _ => self.nx * self.fine_factor.max(1),
        }
    }

    fn metadata(&self, seed: u64) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("pde", self.pde.to_string());
        put("nx", self.nx.to_string());
        put("nt", self.nt.to_string());
        put("t_final", self.t_final.to_string());
        put("fine_factor", self.fine_factor.to_string());
        put("seed", seed.to_string());
        put("domain", if self.pde == Pde::Darcy { "[0,1]^2" } else { "[0,1]" }.into());
        match self.pde {
            Pde::Burgers => {
                put("tau", (self.t_final / (self.nt - 1) as f64).to_string());
                put("nu", self.nu.to_string());
                put("n_waves", self.n_waves.to_string());
                put("scheme", "fv-muscl-godunov-rk2".into());
            }
            Pde::DiffSorp => {
                put("tau", (self.t_final / (self.nt - 1) as f64).to_string());
                put("diffusion", self.diffusion.to_string());
                put("scheme", "fv-implicit-lagged".into());
            }
            Pde::Darcy => {
                put("forcing", "1".into());
                put("scheme", "fv5-harmonic-cg".into());
            }
        }
        m
    }
}

/// One solved sample, row-major over `shape = [N_t, fields, N(, N)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub tau: f64,
}

/// Homogeneous collection of trajectories plus free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub shape: Vec<usize>,
    pub trajectories: Vec<Vec<f64>>,
    pub meta: BTreeMap<String, String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn n_t(&self) -> usize {
        self.shape[0]
    }

    pub fn fields(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    /// Points of the last axis.
    pub fn nx(&self) -> usize {
        *self.shape.last().unwrap()
    }

    /// Values of one snapshot (all fields).
    pub fn frame_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn pde(&self) -> Option<Pde> {
        self.meta.get("pde").and_then(|p| p.parse().ok())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            shape: self.shape.clone(),
            trajectories: indices.iter().map(|&i| self.trajectories[i].clone()).collect(),
            meta: self.meta.clone(),
        }
    }
}

/// Independent seed for trajectory `index` of a run seeded with `seed`.
pub fn trajectory_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_trajectory(cfg: &SolverConfig, seed: u64) -> Result<Trajectory> {
    if cfg.nx < 4 {
        return Err(config_err!("grid of {} points is too small", cfg.nx));
    }
    let nf = cfg.fine_points();
    match cfg.pde {
        Pde::Burgers => solve_burgers(&gen_burgers_ic(seed, cfg.n_waves, nf), cfg),
        Pde::DiffSorp => solve_diffsorp(&gen_diffsorp_ic(seed, nf), cfg),
        Pde::Darcy => {
            let f = cfg.fine_factor.max(1);
            let a = gen_darcy_coefficient(seed, nf);
            let u = solve_darcy(&a, nf, cfg.cg_tol, cfg.cg_max_iter)?;
            let n = cfg.nx;
            let pick = |v: &[f64]| -> Vec<f64> {
                (0..n).flat_map(|i| (0..n).map(move |j| (i * f, j * f))).map(|(i, j)| v[i * nf + j]).collect()
            };
            let mut data = pick(&a);
            data.extend(pick(&u));
            Ok(Trajectory { shape: vec![1, 2, n, n], data, tau: 0.0 })
        }
    }
}

/// `count` trajectories with indices `first..first + count`, solved in
/// parallel. Values are rounded to single precision, the storage format.
pub fn generate_dataset(cfg: &SolverConfig, count: usize, seed: u64, first: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(config_err!("dataset must contain at least one trajectory"));
    }
    let trajs: Vec<Trajectory> = (0..count as u64)
        .into_par_iter()
        .map(|i| generate_trajectory(cfg, trajectory_seed(seed, first + i)))
        .collect::<Result<_>>()?;
    let shape = trajs[0].shape.clone();
    let mut meta = cfg.metadata(seed);
    meta.insert("first_index".into(), first.to_string());
    Ok(Dataset {
        shape,
        trajectories: trajs.into_iter().map(|t| t.data.into_iter().map(|v| v as f32 as f64).collect()).collect(),
        meta,
    })
}
