use crate::error::{Error, Result};

/// Dense cells x genes matrix of nonnegative counts, stored row-major (one row per cell).
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CountMatrix {
    n_cells: usize,
    n_genes: usize,
    data: Vec<u32>,
}

impl CountMatrix {
    pub fn new(n_cells: usize, n_genes: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != n_cells * n_genes {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {n_cells} x {n_genes} matrix",
                data.len()
            )));
        }
        Ok(Self {
            n_cells,
            n_genes,
            data,
        })
    }

    pub fn zeros(n_cells: usize, n_genes: usize) -> Self {
        Self {
            n_cells,
            n_genes,
            data: vec![0; n_cells * n_genes],
        }
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let n_genes = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n_genes) {
            return Err(Error::DimensionMismatch(format!(
                "row {i} has {} entries, expected {n_genes}",
                r.len()
            )));
        }
        Self::new(rows.len(), n_genes, rows.concat())
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    #[inline]
    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    #[inline]
    pub fn get(&self, cell: usize, gene: usize) -> u32 {
        self.data[cell * self.n_genes + gene]
    }

    #[inline]
    pub fn set(&mut self, cell: usize, gene: usize, value: u32) {
        self.data[cell * self.n_genes + gene] = value;
    }

    pub fn row(&self, cell: usize) -> &[u32] {
        &self.data[cell * self.n_genes..(cell + 1) * self.n_genes]
    }

    pub fn column(&self, gene: usize) -> Vec<u32> {
        (0..self.n_cells).map(|c| self.get(c, gene)).collect()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.data
    }

    pub fn max(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}

/// Paired spliced/unspliced counts with the group / subgroup hierarchy of the cells.
///
/// Labels are zero-based. Every subgroup belongs to exactly one group.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Dataset {
    pub spliced: CountMatrix,
    pub unspliced: CountMatrix,
    pub group_of_cell: Vec<usize>,
    pub subgroup_of_cell: Vec<usize>,
    pub group_of_subgroup: Vec<usize>,
    n_groups: usize,
    n_subgroups: usize,
}

impl Dataset {
    /// Builds and validates a dataset. `n_groups` / `n_subgroups` are taken as
    /// one past the largest label; every label in range must be used.
    pub fn new(
        spliced: CountMatrix,
        unspliced: CountMatrix,
        group_of_cell: Vec<usize>,
        subgroup_of_cell: Vec<usize>,
    ) -> Result<Self> {
        if spliced.n_cells() != unspliced.n_cells() || spliced.n_genes() != unspliced.n_genes() {
            return Err(Error::DimensionMismatch(format!(
                "spliced is {} x {}, unspliced is {} x {}",
                spliced.n_cells(),
                spliced.n_genes(),
                unspliced.n_cells(),
                unspliced.n_genes()
            )));
        }
        let n_cells = spliced.n_cells();
        if n_cells == 0 || spliced.n_genes() == 0 {
            return Err(Error::InvalidDataset("need at least one cell and one gene".into()));
        }
        if group_of_cell.len() != n_cells || subgroup_of_cell.len() != n_cells {
            return Err(Error::DimensionMismatch(format!(
                "{n_cells} cells but {} group labels and {} subgroup labels",
                group_of_cell.len(),
                subgroup_of_cell.len()
            )));
        }
        let n_groups = group_of_cell.iter().max().map_or(0, |m| m + 1);
        let n_subgroups = subgroup_of_cell.iter().max().map_or(0, |m| m + 1);
        let mut group_of_subgroup: Vec<Option<usize>> = vec![None; n_subgroups];
        for (&k, &r) in group_of_cell.iter().zip(&subgroup_of_cell) {
            match group_of_subgroup[r] {
                None => group_of_subgroup[r] = Some(k),
                Some(prev) if prev != k => {
                    return Err(Error::SubgroupCrossesGroups {
                        subgroup: r.to_string(),
                        first: prev.to_string(),
                        second: k.to_string(),
                    })
                }
                Some(_) => {}
            }
        }
        let group_of_subgroup = group_of_subgroup
            .into_iter()
            .enumerate()
            .map(|(r, k)| k.ok_or_else(|| Error::InvalidDataset(format!("subgroup {r} has no cells"))))
            .collect::<Result<Vec<_>>>()?;
        let mut seen = vec![false; n_groups];
        for &k in &group_of_subgroup {
            seen[k] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidDataset(format!("group {k} has no cells")));
        }
        Ok(Self {
            spliced,
            unspliced,
            group_of_cell,
            subgroup_of_cell,
            group_of_subgroup,
            n_groups,
            n_subgroups,
        })
    }

    /// Same counts with a new labelling.
    pub fn relabel(&self, group_of_cell: Vec<usize>, subgroup_of_cell: Vec<usize>) -> Result<Self> {
        Self::new(self.spliced.clone(), self.unspliced.clone(), group_of_cell, subgroup_of_cell)
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.spliced.n_cells()
    }

    #[inline]
    pub fn n_genes(&self) -> usize {
        self.spliced.n_genes()
    }

    #[inline]
    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    #[inline]
    pub fn n_subgroups(&self) -> usize {
        self.n_subgroups
    }

    /// Cell indices of every subgroup, in ascending order.
    pub fn cells_by_subgroup(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_subgroups];
        for (c, &r) in self.subgroup_of_cell.iter().enumerate() {
            out[r].push(c);
        }
        out
    }

    /// Subgroup indices of every group, in ascending order.
    pub fn subgroups_by_group(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_groups];
        for (r, &k) in self.group_of_subgroup.iter().enumerate() {
            out[k].push(r);
        }
        out
    }

    /// Largest observed count across both matrices.
    pub fn max_count(&self) -> u32 {
        self.spliced.max().max(self.unspliced.max())
    }

    /// Default upper bound for steady-state coordinates: twice the largest count.
    pub fn default_bound(&self) -> f64 {
        (2.0 * f64::from(self.max_count())).max(1.0)
    }
}
