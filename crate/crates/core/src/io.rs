//! Reading count matrices and labels, and persisting posterior draws.
//!
//! Counts are cells x genes, either dense CSV (header `cell,<gene>...`, one
//! row per cell) or Matrix Market coordinate files (rows are cells, 1-based
//! indices). Labels are CSV with header `cell,group[,subgroup]`; label values
//! are arbitrary strings mapped to indices in order of first appearance.
//!
//! Draws are stored one binary file per parameter family: the 8-byte magic
//! `RVDRAW01`, the number of draws and of columns as little-endian `u64`, then
//! the values as little-endian `f64`, one draw per row.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CountMatrix, Dataset, GeneParams, Hyper, ModelState};
use crate::sampler::{AcceptanceReport, ChainConfig, PointwiseAccumulator, PosteriorDraws};

pub const DRAW_MAGIC: &[u8; 8] = b"RVDRAW01";

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn parse_count(raw: &str, path: &Path, line: usize) -> Result<u32> {
    let t = raw.trim();
    if let Ok(v) = t.parse::<u32>() {
        return Ok(v);
    }
    // Accept integral reals such as "3.0" or "1e2".
    match t.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX) => Ok(v as u32),
        _ => Err(Error::NonIntegerCount {
            path: path.to_path_buf(),
            line,
            value: t.to_string(),
        }),
    }
}

/// Dense count matrix with its row and column names.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedCounts {
    pub cells: Vec<String>,
    pub genes: Vec<String>,
    pub counts: CountMatrix,
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(open(path)?))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: e.to_string(),
    }
}

pub fn read_counts_csv(path: &Path) -> Result<NamedCounts> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "expected a header `cell,<gene>...`".into(),
        });
    }
    let genes: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut cells = Vec::new();
    let mut data = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != genes.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{}: line {line} has {} fields, header has {}",
                path.display(),
                rec.len(),
                genes.len() + 1
            )));
        }
        cells.push(rec[0].to_string());
        for v in rec.iter().skip(1) {
            data.push(parse_count(v, path, line)?);
        }
    }
    let counts = CountMatrix::new(cells.len(), genes.len(), data)?;
    Ok(NamedCounts { cells, genes, counts })
}

pub fn read_counts_mtx(path: &Path) -> Result<CountMatrix> {
    let reader = BufReader::new(open(path)?);
    let mut lines = reader.lines().enumerate();
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let (_, banner) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    let banner = banner.map_err(|e| Error::io(path, e))?.to_lowercase();
    let fields: Vec<&str> = banner.split_whitespace().collect();
    if fields.len() < 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" || fields[2] != "coordinate" {
        return Err(perr(1, "expected `%%MatrixMarket matrix coordinate ...`".into()));
    }
    if !matches!(fields[3], "integer" | "real") || fields[4] != "general" {
        return Err(perr(1, format!("unsupported field/symmetry `{} {}`", fields[3], fields[4])));
    }
    let mut shape: Option<(usize, usize)> = None;
    let mut data = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        match shape {
            None => {
                if parts.len() != 3 {
                    return Err(perr(n, "expected `rows cols entries`".into()));
                }
                let p = |s: &str| s.parse::<usize>().map_err(|_| perr(n, format!("bad size `{s}`")));
                let (rows, cols) = (p(parts[0])?, p(parts[1])?);
                p(parts[2])?;
                shape = Some((rows, cols));
                data = vec![0u32; rows * cols];
            }
            Some((rows, cols)) => {
                if parts.len() != 3 {
                    return Err(perr(n, "expected `row col value`".into()));
                }
                let idx = |s: &str, max: usize| match s.parse::<usize>() {
                    Ok(v) if v >= 1 && v <= max => Ok(v - 1),
                    _ => Err(Error::DimensionMismatch(format!(
                        "{}: line {n}: index `{s}` outside 1..={max}",
                        path.display()
                    ))),
                };
                let (r, c) = (idx(parts[0], rows)?, idx(parts[1], cols)?);
                let v = parse_count(parts[2], path, n)?;
                data[r * cols + c] = data[r * cols + c].saturating_add(v);
            }
        }
    }
    let (rows, cols) = shape.ok_or_else(|| perr(0, "missing size line".into()))?;
    CountMatrix::new(rows, cols, data)
}

/// Reads a count matrix, choosing the format from the extension (`.mtx` is
/// Matrix Market, anything else dense CSV).
pub fn read_counts(path: &Path) -> Result<NamedCounts> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx")) {
        let counts = read_counts_mtx(path)?;
        Ok(NamedCounts {
            cells: (0..counts.n_cells()).map(|c| c.to_string()).collect(),
            genes: (0..counts.n_genes()).map(|g| g.to_string()).collect(),
            counts,
        })
    } else {
        read_counts_csv(path)
    }
}

/// Cell labels with their original names.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub cells: Vec<String>,
    pub group: Vec<usize>,
    pub subgroup: Vec<usize>,
    pub group_names: Vec<String>,
    pub subgroup_names: Vec<String>,
}

fn intern(map: &mut HashMap<String, usize>, names: &mut Vec<String>, key: &str) -> usize {
    if let Some(&i) = map.get(key) {
        return i;
    }
    names.push(key.to_string());
    map.insert(key.to_string(), names.len() - 1);
    names.len() - 1
}

/// Reads `cell,group[,subgroup]`. Without a subgroup column each group is a
/// single subgroup. A subgroup used in two groups is rejected.
pub fn read_labels(path: &Path) -> Result<Labels> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let width = header.len();
    if !(width == 2 || width == 3) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "expected header `cell,group[,subgroup]`".into(),
        });
    }
    let mut out = Labels {
        cells: Vec::new(),
        group: Vec::new(),
        subgroup: Vec::new(),
        group_names: Vec::new(),
        subgroup_names: Vec::new(),
    };
    let (mut gmap, mut smap) = (HashMap::new(), HashMap::new());
    let mut owner: Vec<usize> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let g = intern(&mut gmap, &mut out.group_names, &rec[1]);
        let sub_name = if width == 3 { rec[2].to_string() } else { rec[1].to_string() };
        let s = intern(&mut smap, &mut out.subgroup_names, &sub_name);
        if s == owner.len() {
            owner.push(g);
        } else if owner[s] != g {
            return Err(Error::SubgroupCrossesGroups {
                subgroup: sub_name,
                first: out.group_names[owner[s]].clone(),
                second: out.group_names[g].clone(),
            });
        }
        out.cells.push(rec[0].to_string());
        out.group.push(g);
        out.subgroup.push(s);
    }
    Ok(out)
}

/// Reads and validates a dataset. When both the counts and the labels carry
/// cell names they must agree row by row.
pub fn ingest(spliced: &Path, unspliced: &Path, labels: &Path) -> Result<Dataset> {
    let s = read_counts(spliced)?;
    let u = read_counts(unspliced)?;
    let l = read_labels(labels)?;
    if l.cells.len() != s.counts.n_cells() {
        return Err(Error::DimensionMismatch(format!(
            "{} labelled cells but {} rows of counts",
            l.cells.len(),
            s.counts.n_cells()
        )));
    }
    let named = |p: &Path| !p.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx"));
    for (counts, path) in [(&s, spliced), (&u, unspliced)] {
        if named(path) && counts.cells.len() == l.cells.len() {
            if let Some(c) = (0..l.cells.len()).find(|&c| counts.cells[c] != l.cells[c]) {
                return Err(Error::DimensionMismatch(format!(
                    "row {c} is cell `{}` in {} but `{}` in the labels",
                    counts.cells[c],
                    path.display(),
                    l.cells[c]
                )));
            }
        }
    }
    Dataset::new(s.counts, u.counts, l.group, l.subgroup)
}

pub fn write_counts_csv(path: &Path, counts: &CountMatrix, cells: &[String], genes: &[String]) -> Result<()> {
    let mut w = create(path)?;
    let mut out = String::from("cell");
    for g in genes {
        out.push(',');
        out.push_str(g);
    }
    out.push('\n');
    for (c, name) in cells.iter().enumerate() {
        out.push_str(name);
        for v in counts.row(c) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn write_counts_mtx(path: &Path, counts: &CountMatrix) -> Result<()> {
    let mut w = create(path)?;
    let nnz = counts.as_slice().iter().filter(|&&v| v > 0).count();
    let mut out = format!(
        "%%MatrixMarket matrix coordinate integer general\n{} {} {nnz}\n",
        counts.n_cells(),
        counts.n_genes()
    );
    for c in 0..counts.n_cells() {
        for (g, &v) in counts.row(c).iter().enumerate() {
            if v > 0 {
                out.push_str(&format!("{} {} {v}\n", c + 1, g + 1));
            }
        }
    }
    w.write_all(out.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn write_labels(path: &Path, cells: &[String], group: &[String], subgroup: &[String]) -> Result<()> {
    let mut w = create(path)?;
    let mut out = String::from("cell,group,subgroup\n");
    for ((c, g), s) in cells.iter().zip(group).zip(subgroup) {
        out.push_str(&format!("{c},{g},{s}\n"));
    }
    w.write_all(out.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Real-valued matrix as CSV with full round-trip precision.
pub fn write_real_csv(path: &Path, header: &[String], rows: &[Vec<f64>], row_names: &[String]) -> Result<()> {
    let mut w = create(path)?;
    let mut out = header.join(",");
    out.push('\n');
    for (name, row) in row_names.iter().zip(rows) {
        out.push_str(name);
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Row-major draws x columns table.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawTable {
    pub n_draws: usize,
    pub n_cols: usize,
    pub values: Vec<f64>,
}

impl DrawTable {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }
}

pub fn write_draw_table(path: &Path, table: &DrawTable) -> Result<()> {
    let mut w = create(path)?;
    let mut buf = Vec::with_capacity(24 + 8 * table.values.len());
    buf.extend_from_slice(DRAW_MAGIC);
    buf.extend_from_slice(&(table.n_draws as u64).to_le_bytes());
    buf.extend_from_slice(&(table.n_cols as u64).to_le_bytes());
    for v in &table.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_draw_table(path: &Path) -> Result<DrawTable> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: msg.to_string(),
    };
    if bytes.len() < 24 || &bytes[..8] != DRAW_MAGIC {
        return Err(bad("not a draw file"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes")) as usize;
    let (n_draws, n_cols) = (word(8), word(16));
    if bytes.len() != 24 + 8 * n_draws * n_cols {
        return Err(bad("truncated draw file"));
    }
    let values = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(DrawTable { n_draws, n_cols, values })
}

/// Parameter families written by [`write_draws`].
pub const DRAW_FILES: [&str; 9] = [
    "u_off", "u_on", "s_on", "eta", "u_switch", "phi", "lambda", "log_posterior", "log_likelihood",
];

/// Everything about a chain except the draws themselves.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DrawMeta {
    hyper: Hyper,
    n_genes: usize,
    n_groups: usize,
    n_subgroups: usize,
    n_cells: usize,
    group_of_subgroup: Vec<usize>,
    config: ChainConfig,
    acceptance: AcceptanceReport,
}

fn family_table(draws: &PosteriorDraws, name: &str) -> DrawTable {
    let get = |s: &ModelState| -> Vec<f64> {
        match name {
            "u_off" => s.genes.iter().map(|g| g.u_off).collect(),
            "u_on" => s.genes.iter().map(|g| g.u_on).collect(),
            "s_on" => s.genes.iter().map(|g| g.s_on).collect(),
            "eta" => s.genes.iter().map(|g| g.eta).collect(),
            "u_switch" => s.u_sw.clone(),
            "phi" => s.phi.clone(),
            "lambda" => s.lambda.clone(),
            _ => unreachable!("not a state family"),
        }
    };
    let (n_cols, values) = match name {
        "log_posterior" => (1, draws.log_posterior.clone()),
        "log_likelihood" => (1, draws.log_likelihood.clone()),
        _ => {
            let rows: Vec<Vec<f64>> = draws.draws.iter().map(get).collect();
            (rows.first().map_or(0, Vec::len), rows.concat())
        }
    };
    DrawTable {
        n_draws: draws.len(),
        n_cols,
        values,
    }
}

/// Writes a chain's output into `dir`: one binary file per family, a JSON
/// metadata record and the streaming pointwise log-likelihood summaries.
/// With `csv`, each family is also exported as `<family>.csv`.
pub fn write_draws(dir: &Path, draws: &PosteriorDraws, csv: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = draws.draws.first();
    let meta = DrawMeta {
        hyper: first.map_or(Hyper { a: 1.0, p: Hyper::DEFAULT_SECTOR }, |s| s.hyper),
        n_genes: first.map_or(0, ModelState::n_genes),
        n_groups: first.map_or(0, ModelState::n_groups),
        n_subgroups: draws.group_of_subgroup.len(),
        n_cells: first.map_or(0, ModelState::n_cells),
        group_of_subgroup: draws.group_of_subgroup.clone(),
        config: draws.config.clone(),
        acceptance: draws.acceptance,
    };
    write_json(&dir.join("draws.json"), &meta)?;
    for name in DRAW_FILES {
        let table = family_table(draws, name);
        write_draw_table(&dir.join(format!("{name}.bin")), &table)?;
        if csv {
            let header: Vec<String> = std::iter::once("draw".to_string())
                .chain((0..table.n_cols).map(|j| format!("{name}_{j}")))
                .collect();
            let rows: Vec<Vec<f64>> = (0..table.n_draws).map(|i| table.row(i).to_vec()).collect();
            let names: Vec<String> = (0..table.n_draws).map(|i| i.to_string()).collect();
            write_real_csv(&dir.join(format!("{name}.csv")), &header, &rows, &names)?;
        }
    }
    let pw = bincode::serialize(&draws.pointwise).map_err(|e| Error::Checkpoint(e.to_string()))?;
    write_bytes(&dir.join("pointwise.bin"), &pw)?;
    if let Some(ll) = &draws.loglik {
        let n_cols = ll.first().map_or(0, Vec::len);
        write_draw_table(
            &dir.join("loglik.bin"),
            &DrawTable {
                n_draws: ll.len(),
                n_cols,
                values: ll.concat(),
            },
        )?;
    }
    Ok(())
}

pub fn read_draws(dir: &Path) -> Result<PosteriorDraws> {
    let meta: DrawMeta = read_json(&dir.join("draws.json"))?;
    let tables: HashMap<&str, DrawTable> = DRAW_FILES
        .iter()
        .map(|&n| read_draw_table(&dir.join(format!("{n}.bin"))).map(|t| (n, t)))
        .collect::<Result<_>>()?;
    let n = tables["lambda"].n_draws;
    let expect = [
        ("u_off", meta.n_genes),
        ("u_on", meta.n_genes),
        ("s_on", meta.n_genes),
        ("eta", meta.n_genes),
        ("u_switch", meta.n_groups * meta.n_genes),
        ("phi", meta.n_subgroups * meta.n_genes),
        ("lambda", meta.n_cells),
        ("log_posterior", 1),
        ("log_likelihood", 1),
    ];
    for (name, cols) in expect {
        let t = &tables[name];
        if t.n_draws != n || (n > 0 && t.n_cols != cols) {
            return Err(Error::DimensionMismatch(format!(
                "{name}.bin is {} x {}, expected {n} x {cols}",
                t.n_draws, t.n_cols
            )));
        }
    }
    let draws = (0..n)
        .map(|i| {
            let (uo, un, so, eta) = (
                tables["u_off"].row(i),
                tables["u_on"].row(i),
                tables["s_on"].row(i),
                tables["eta"].row(i),
            );
            ModelState {
                hyper: meta.hyper,
                genes: (0..meta.n_genes)
                    .map(|g| GeneParams {
                        u_off: uo[g],
                        u_on: un[g],
                        s_on: so[g],
                        eta: eta[g],
                    })
                    .collect(),
                u_sw: tables["u_switch"].row(i).to_vec(),
                phi: tables["phi"].row(i).to_vec(),
                lambda: tables["lambda"].row(i).to_vec(),
            }
        })
        .collect();
    let pointwise: PointwiseAccumulator = bincode::deserialize(&read_bytes(&dir.join("pointwise.bin"))?)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let ll_path = dir.join("loglik.bin");
    let loglik = if ll_path.exists() {
        let t = read_draw_table(&ll_path)?;
        Some((0..t.n_draws).map(|i| t.row(i).to_vec()).collect())
    } else {
        None
    };
    Ok(PosteriorDraws {
        config: meta.config,
        group_of_subgroup: meta.group_of_subgroup,
        draws,
        log_posterior: tables["log_posterior"].values.clone(),
        log_likelihood: tables["log_likelihood"].values.clone(),
        pointwise,
        loglik,
        acceptance: meta.acceptance,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })?;
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Writes atomically via a temporary sibling file.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp: PathBuf = path.with_extension("tmp");
    {
        let mut w = create(&tmp)?;
        w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draw_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        let t = DrawTable {
            n_draws: 2,
            n_cols: 3,
            values: vec![1.0, -2.5, f64::MIN_POSITIVE, 0.1, 1e300, -0.0],
        };
        write_draw_table(&p, &t).unwrap();
        let back = read_draw_table(&p).unwrap();
        assert_eq!(back.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), t.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn non_integer_count_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "cell,g1,g2\na,1,2\nb,3,2.5\n").unwrap();
        let err = read_counts_csv(&p).unwrap_err();
        assert!(matches!(err, Error::NonIntegerCount { line: 3, .. }), "{err}");
    }

    #[test]
    fn labels_without_subgroups() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        fs::write(&p, "cell,group\na,x\nb,y\nc,x\n").unwrap();
        let l = read_labels(&p).unwrap();
        assert_eq!(l.group, vec![0, 1, 0]);
        assert_eq!(l.subgroup, vec![0, 1, 0]);
    }
}
