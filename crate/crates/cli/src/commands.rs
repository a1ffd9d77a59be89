use std::error::Error as StdError;
use std::path::{Path, PathBuf};

use velocity_core::evaluate::{
    credible_interval, family_draws, family_values, median_length, pca_counts, posterior_median, project_arrows,
    summary_table, waic, Family, DEFAULT_DT,
};
use velocity_core::io::{self, read_counts, read_draws, read_labels, write_real_csv};
use velocity_core::model::{Dataset, Hyper};
use velocity_core::sampler::{Chain, ChainConfig, Init};
use velocity_core::simulate::{
    default_deming_variance, gen_counts_nb, gen_deming_data, gen_in_data, gen_parameters, ContinuousData, Scenario,
    SimulationTruth,
};
use velocity_core::stats::median;

use crate::config::Settings;

pub type CmdResult = Result<(), Box<dyn StdError>>;

const CONFIG_ECHO: &str = "config.toml";
const CHECKPOINT: &str = "checkpoint.bin";
const DRAWS_DIR: &str = "draws";

fn out_dir(s: &Settings) -> Result<PathBuf, String> {
    Settings::require(&s.out, "out").cloned()
}

fn echo(dir: &Path, s: &Settings) -> CmdResult {
    io::write_bytes(&dir.join(CONFIG_ECHO), s.to_toml().as_bytes())?;
    Ok(())
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn load_dataset(s: &Settings) -> Result<Dataset, Box<dyn StdError>> {
    let sp = Settings::require(&s.spliced, "spliced")?;
    let un = Settings::require(&s.unspliced, "unspliced")?;
    let lb = Settings::require(&s.labels, "labels")?;
    Ok(io::ingest(sp, un, lb)?)
}

fn write_continuous(dir: &Path, tag: &str, d: &ContinuousData) -> CmdResult {
    let header: Vec<String> = std::iter::once("cell".to_string()).chain(names("g", d.n_genes)).collect();
    let cells = names("c", d.n_cells);
    for (kind, values) in [("spliced", &d.spliced), ("unspliced", &d.unspliced)] {
        let rows: Vec<Vec<f64>> = values.chunks(d.n_genes.max(1)).map(<[f64]>::to_vec).collect();
        write_real_csv(&dir.join(format!("{tag}_{kind}.csv")), &header, &rows, &cells)?;
    }
    Ok(())
}

pub fn simulate(mut s: Settings) -> CmdResult {
    let dir = out_dir(&s)?;
    s.seed.get_or_insert(0);
    s.genes.get_or_insert(100);
    s.cells.get_or_insert(300);
    s.groups.get_or_insert(1);
    s.subgroups.get_or_insert(5);
    s.levels.get_or_insert(5);
    s.sector_p.get_or_insert(Hyper::DEFAULT_SECTOR);
    s.continuous.get_or_insert(false);
    let mut sc = Scenario::new(
        s.genes.unwrap(),
        s.cells.unwrap(),
        s.groups.unwrap(),
        s.subgroups.unwrap(),
        s.levels.unwrap(),
        s.seed.unwrap(),
    )?;
    sc.sector = s.sector_p.unwrap();
    sc.validate()?;

    let truth = gen_parameters(&sc)?;
    let data = gen_counts_nb(&truth)?;
    let cells = names("c", data.n_cells());
    let genes = names("g", data.n_genes());
    io::write_counts_csv(&dir.join("spliced.csv"), &data.spliced, &cells, &genes)?;
    io::write_counts_csv(&dir.join("unspliced.csv"), &data.unspliced, &cells, &genes)?;
    let group: Vec<String> = data.group_of_cell.iter().map(usize::to_string).collect();
    let subgroup: Vec<String> = data.subgroup_of_cell.iter().map(usize::to_string).collect();
    io::write_labels(&dir.join("labels.csv"), &cells, &group, &subgroup)?;
    io::write_json(&dir.join("truth.json"), &truth)?;
    if s.continuous == Some(true) {
        write_continuous(&dir, "in", &gen_in_data(&truth))?;
        write_continuous(&dir, "deming", &gen_deming_data(&truth, default_deming_variance(&truth))?)?;
    }
    echo(&dir, &s)?;
    eprintln!(
        "simulated {} cells x {} genes ({} groups, {} subgroups) into {}",
        sc.n_cells,
        sc.n_genes,
        sc.n_groups,
        sc.n_subgroups,
        dir.display()
    );
    Ok(())
}

pub fn fit(mut s: Settings, resume: bool) -> CmdResult {
    let dir = out_dir(&s)?;
    let data = load_dataset(&s)?;
    let defaults = ChainConfig::default();
    s.seed.get_or_insert(defaults.seed);
    s.iters.get_or_insert(defaults.n_iter);
    s.burnin.get_or_insert(defaults.n_burnin);
    s.thin.get_or_insert(defaults.thin);
    s.threads.get_or_insert(0);
    s.sector_p.get_or_insert(Hyper::DEFAULT_SECTOR);
    s.bound_a.get_or_insert(data.default_bound());
    s.checkpoint_every.get_or_insert(1000);
    s.csv.get_or_insert(false);
    s.store_loglik.get_or_insert(false);

    let mut cfg = ChainConfig::new(s.iters.unwrap(), s.burnin.unwrap(), s.thin.unwrap(), s.seed.unwrap())?;
    cfg.threads = s.threads.unwrap();
    cfg.store_loglik = s.store_loglik.unwrap();
    let hyper = Hyper::new(s.bound_a.unwrap(), s.sector_p.unwrap())?;
    let every = s.checkpoint_every.unwrap();
    if every == 0 {
        return Err("checkpoint-every must be at least 1".into());
    }

    std::fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let ckpt = dir.join(CHECKPOINT);
    let mut chain = if resume {
        let bytes = io::read_bytes(&ckpt)?;
        let chain = Chain::resume(&data, &bytes)?;
        if chain.config() != &cfg {
            return Err(format!("{} was written with a different sampler configuration", ckpt.display()).into());
        }
        if chain.state().hyper != hyper {
            return Err(format!("{} was written with different hyperparameters", ckpt.display()).into());
        }
        eprintln!("resuming at iteration {}", chain.iteration());
        chain
    } else {
        Chain::new(&data, cfg, Init::Auto(hyper))?
    };
    echo(&dir, &s)?;
    while !chain.is_done() {
        chain.advance(every);
        io::write_bytes(&ckpt, &chain.checkpoint()?)?;
        eprintln!("iteration {}/{}", chain.iteration(), chain.config().n_iter);
    }
    let draws = chain.finish();
    io::write_draws(&dir.join(DRAWS_DIR), &draws, s.csv.unwrap())?;
    for (name, acc) in draws.acceptance.blocks() {
        if let Some(r) = acc.rate() {
            eprintln!("acceptance {name}: {r:.3}");
        }
    }
    Ok(())
}

fn fit_dir(s: &Settings) -> Result<PathBuf, String> {
    s.fit.clone().or_else(|| s.out.clone()).ok_or_else(|| "missing required setting `--fit`".into())
}

pub fn summarize(mut s: Settings) -> CmdResult {
    let fit = fit_dir(&s)?;
    let dir = s.out.clone().unwrap_or_else(|| fit.clone());
    s.level.get_or_insert(0.95);
    let level = s.level.unwrap();
    let draws = read_draws(&fit.join(DRAWS_DIR))?;
    let truth: Option<SimulationTruth> = s.truth.as_deref().map(io::read_json).transpose()?;

    let fam = family_draws(&draws);
    let truth_values = truth.as_ref().map(|t| family_values(&t.state, &draws.group_of_subgroup));
    let table = truth.as_ref().map(|t| summary_table(&draws, &t.state, level)).transpose()?;

    let mut intervals = String::from("family,index,median,lower,upper");
    intervals.push_str(if truth.is_some() { ",truth\n" } else { "\n" });
    let mut summary = String::from("family,n,median_ci_length");
    if table.is_some() {
        summary.push_str(",median_relative_error,zero_truth_excluded,median_absolute_error,coverage");
    }
    summary.push('\n');
    for (f, family) in Family::ALL.into_iter().enumerate() {
        let mut cis = Vec::with_capacity(fam[f].len());
        for (i, d) in fam[f].iter().enumerate() {
            let (lo, hi) = credible_interval(d, level)?;
            cis.push((lo, hi));
            intervals.push_str(&format!("{},{i},{},{lo},{hi}", family.name(), median(d)));
            if let Some(t) = &truth_values {
                intervals.push_str(&format!(",{}", t[f][i]));
            }
            intervals.push('\n');
        }
        summary.push_str(&format!("{},{},{}", family.name(), cis.len(), median_length(&cis)));
        if let Some(t) = &table {
            let row = t.row(family);
            let rel = row.median_relative_error.map_or(String::from("NA"), |v| v.to_string());
            summary.push_str(&format!(
                ",{rel},{},{},{}",
                row.zero_truth_excluded, row.median_absolute_error, row.coverage
            ));
        }
        summary.push('\n');
    }
    io::write_bytes(&dir.join("intervals.csv"), intervals.as_bytes())?;
    io::write_bytes(&dir.join("summary.csv"), summary.as_bytes())?;
    io::write_json(&dir.join("waic.json"), &waic(&draws)?)?;
    Ok(())
}

pub fn project(mut s: Settings) -> CmdResult {
    let fit = fit_dir(&s)?;
    let dir = s.out.clone().unwrap_or_else(|| fit.clone());
    s.components.get_or_insert(2);
    s.dt.get_or_insert(DEFAULT_DT);
    let (d, dt) = (s.components.unwrap(), s.dt.unwrap());
    let data = load_dataset(&s)?;
    let labels = read_labels(Settings::require(&s.labels, "labels")?)?;
    let draws = read_draws(&fit.join(DRAWS_DIR))?;
    let est = posterior_median(&draws)?;
    est.check_shape(data.n_cells(), data.n_groups(), data.n_subgroups())?;

    let n_genes = data.n_genes();
    let pos = est.positions(&data.group_of_subgroup);
    let vel = est.velocities(&data.group_of_subgroup);
    let mut sr = Vec::with_capacity(data.n_cells() * n_genes);
    let mut vr = Vec::with_capacity(data.n_cells() * n_genes);
    for c in 0..data.n_cells() {
        let (r, l) = (data.subgroup_of_cell[c], est.lambda[c]);
        for g in 0..n_genes {
            sr.push(l * pos[r * n_genes + g].s);
            vr.push(l * vel[r * n_genes + g]);
        }
    }
    let pca = pca_counts(&data.spliced, d)?;
    let (now, future) = project_arrows(&pca, &sr, &vr, dt)?;

    let mut header = vec!["cell".to_string(), "group".into(), "subgroup".into()];
    for prefix in ["pc", "fitted_pc", "arrow_pc"] {
        header.extend((1..=d).map(|j| format!("{prefix}{j}")));
    }
    let mut rows = Vec::with_capacity(data.n_cells());
    let mut row_names = Vec::with_capacity(data.n_cells());
    for c in 0..data.n_cells() {
        let span = c * d..(c + 1) * d;
        let delta: Vec<f64> = future[span.clone()].iter().zip(&now[span.clone()]).map(|(f, n)| f - n).collect();
        let norm = delta.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut row = pca.scores[span.clone()].to_vec();
        row.extend_from_slice(&now[span]);
        row.extend(delta.iter().map(|x| if norm > 0.0 { x / norm } else { 0.0 }));
        rows.push(row);
        row_names.push(format!(
            "{},{},{}",
            labels.cells[c],
            labels.group_names[labels.group[c]],
            labels.subgroup_names[labels.subgroup[c]]
        ));
    }
    write_real_csv(&dir.join("projection.csv"), &header, &rows, &row_names)?;
    write_real_csv(
        &dir.join("explained_variance.csv"),
        &["component".into(), "variance".into(), "fraction".into()],
        &pca.explained_variance.iter().map(|&v| vec![v, v / pca.total_variance]).collect::<Vec<_>>(),
        &(1..=d).map(|j| j.to_string()).collect::<Vec<_>>(),
    )?;
    Ok(())
}

pub fn subgroups(mut s: Settings) -> CmdResult {
    let dir = out_dir(&s)?;
    s.min_size.get_or_insert(30);
    let counts = read_counts(Settings::require(&s.spliced, "spliced")?)?;
    let labels = read_labels(Settings::require(&s.labels, "labels")?)?;
    if labels.cells.len() != counts.counts.n_cells() {
        return Err(format!(
            "{} labelled cells but {} rows of counts",
            labels.cells.len(),
            counts.counts.n_cells()
        )
        .into());
    }
    let sub = velocity_core::evaluate::derive_subgroups(&counts.counts, &labels.group, s.min_size.unwrap())?;
    let group: Vec<String> = labels.group.iter().map(|&k| labels.group_names[k].clone()).collect();
    let subgroup: Vec<String> = sub.iter().map(usize::to_string).collect();
    io::write_labels(&dir.join("labels.csv"), &labels.cells, &group, &subgroup)?;
    echo(&dir, &s)?;
    eprintln!("{} subgroups", sub.iter().max().map_or(0, |m| m + 1));
    Ok(())
}
