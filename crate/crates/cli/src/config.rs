//! Flat key-value run configuration. Values come from an optional TOML file
//! and are overridden by command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

/// Every setting any command understands. Keys in the config file use the
/// flag names with `-` replaced by `_`.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Spliced counts (dense CSV or Matrix Market `.mtx`), cells x genes.
    #[arg(long)]
    pub spliced: Option<PathBuf>,
    /// Unspliced counts, same layout as the spliced matrix.
    #[arg(long)]
    pub unspliced: Option<PathBuf>,
    /// Cell labels: `cell,group[,subgroup]`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory written by `fit` (defaults to the output directory).
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Simulation truth written by `simulate`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub genes: Option<usize>,
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub subgroups: Option<usize>,
    /// Shared time centres in a single-group simulation.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Angular width of the prior's OFF-steady-state sector.
    #[arg(long = "sector-p")]
    pub sector_p: Option<f64>,
    /// Upper bound on the almond coordinates (default: twice the largest count).
    #[arg(long = "bound-a")]
    pub bound_a: Option<f64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long = "checkpoint-every")]
    pub checkpoint_every: Option<usize>,
    /// Smallest subgroup `subgroups` may create.
    #[arg(long = "min-size")]
    pub min_size: Option<usize>,
    /// Credible level for `summarize`.
    #[arg(long)]
    pub level: Option<f64>,
    /// Also write the continuous benchmark matrices in `simulate`.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub continuous: Option<bool>,
    /// Also export draws as CSV in `fit`.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub csv: Option<bool>,
    /// Keep the full pointwise log-likelihood matrix in `fit`.
    #[arg(long = "store-loglik", num_args = 0..=1, default_missing_value = "true")]
    pub store_loglik: Option<bool>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )*
    };
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// `self` with every value set in `top` replaced.
    pub fn overlay(mut self, top: &Settings) -> Self {
        let base = &mut self;
        overlay!(
            base, top, spliced, unspliced, labels, out, fit, truth, seed, iters, burnin, thin, genes, cells,
            groups, subgroups, levels, sector_p, bound_a, threads, dt, components, checkpoint_every, min_size,
            level, continuous, csv, store_loglik
        );
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat settings serialize")
    }

    pub fn require<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T, String> {
        value.as_ref().ok_or_else(|| format!("missing required setting `--{name}`"))
    }
}
