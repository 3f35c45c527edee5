//! Dataset model: an N items x M locations pair of price and expenditure
//! matrices, expenditure shares, and the bilateral slice every index consumes.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{IndexError, Result};
use crate::format::g17;

/// Prices and expenditures for `N` items in `M` locations.
///
/// Immutable once built. Every constructor validates:
/// prices strictly positive and finite, expenditures finite, nonzero total
/// expenditure in each location, `N >= 2` and `M >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonDataset {
    items: Arc<[String]>,
    locations: Arc<[String]>,
    prices: DMatrix<f64>,
    expenditures: DMatrix<f64>,
}

impl ComparisonDataset {
    /// Builds a dataset from `N x M` matrices (rows = items, columns = locations).
    pub fn new(
        items: Vec<String>,
        locations: Vec<String>,
        prices: DMatrix<f64>,
        expenditures: DMatrix<f64>,
    ) -> Result<Self> {
        check_unique(&items)?;
        check_unique(&locations)?;
        Self::build(items.into(), locations.into(), prices, expenditures)
    }

    fn build(
        items: Arc<[String]>,
        locations: Arc<[String]>,
        prices: DMatrix<f64>,
        expenditures: DMatrix<f64>,
    ) -> Result<Self> {
        let (n, m) = (items.len(), locations.len());
        if n < 2 || m < 2 {
            return Err(IndexError::TooSmall { items: n, locations: m });
        }
        for (what, mat) in [("prices", &prices), ("expenditures", &expenditures)] {
            if mat.shape() != (n, m) {
                return Err(IndexError::Dimension(format!(
                    "{what} matrix is {}x{}, labels give {n}x{m}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
        }
        for j in 0..m {
            for i in 0..n {
                let p = prices[(i, j)];
                let cell = || (items[i].clone(), locations[j].clone());
                if p.is_nan() || expenditures[(i, j)].is_nan() {
                    let (item, location) = cell();
                    return Err(IndexError::MissingCell { item, location });
                }
                if !p.is_finite() || !expenditures[(i, j)].is_finite() {
                    let (item, location) = cell();
                    return Err(IndexError::NonfiniteValue { item, location });
                }
                if p <= 0.0 {
                    let (item, location) = cell();
                    return Err(IndexError::NonpositivePrice { item, location });
                }
            }
            if column_total(&expenditures, j) == 0.0 {
                return Err(IndexError::ZeroTotalExpenditure(locations[j].clone()));
            }
        }
        Ok(Self { items, locations, prices, expenditures })
    }

    /// Parses the price and expenditure CSV pair.
    ///
    /// Both files carry the header `item,LOC1,...,LOCM` followed by one row per
    /// item. Headers and item columns must be identical in both files.
    pub fn from_csv_readers<P: Read, E: Read>(prices: P, expenditures: E) -> Result<Self> {
        let p = RawTable::parse(prices, "prices")?;
        let e = RawTable::parse(expenditures, "expenditures")?;
        if p.header != e.header {
            return Err(IndexError::LabelMismatch("headers differ".into()));
        }
        if p.items != e.items {
            return Err(IndexError::LabelMismatch("item columns differ".into()));
        }
        let locations = p.header[1..].to_vec();
        let prices = p.into_matrix(&locations)?;
        let expenditures = e.into_matrix(&locations)?;
        Self::new(prices.0, locations, prices.1, expenditures.1)
    }

    /// Writes the dataset as the CSV pair read by [`Self::from_csv_readers`],
    /// with 17 significant digits so values round-trip exactly.
    pub fn write_csv<P: Write, E: Write>(&self, prices: P, expenditures: E) -> Result<()> {
        write_matrix(prices, &self.items, &self.locations, &self.prices)?;
        write_matrix(expenditures, &self.items, &self.locations, &self.expenditures)
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn prices(&self) -> &DMatrix<f64> {
        &self.prices
    }

    pub fn expenditures(&self) -> &DMatrix<f64> {
        &self.expenditures
    }

    pub fn location_index(&self, id: &str) -> Result<usize> {
        self.locations
            .iter()
            .position(|l| l == id)
            .ok_or_else(|| IndexError::UnknownLocation(id.to_string()))
    }

    fn check_location(&self, j: usize) -> Result<()> {
        if j < self.n_locations() {
            Ok(())
        } else {
            Err(IndexError::UnknownLocation(format!("#{j}")))
        }
    }

    /// Expenditure shares `s_n = e_n / sum e_n` of one location.
    pub fn shares(&self, location: usize) -> Result<ShareVector> {
        self.check_location(location)?;
        let e: Vec<f64> = self.expenditures.column(location).iter().copied().collect();
        ShareVector::from_expenditures(&self.locations[location], &e)
    }

    /// Bilateral slice with `target` (j) compared against `base` (k).
    /// `target == base` is allowed.
    pub fn view(&self, target: usize, base: usize) -> Result<BilateralView> {
        self.check_location(target)?;
        self.check_location(base)?;
        BilateralView::build(
            Arc::clone(&self.items),
            (target, self.locations[target].clone()),
            (base, self.locations[base].clone()),
            self.prices.column(target).iter().copied().collect(),
            self.prices.column(base).iter().copied().collect(),
            self.expenditures.column(target).iter().copied().collect(),
            self.expenditures.column(base).iter().copied().collect(),
        )
    }

    pub fn view_by_id(&self, target: &str, base: &str) -> Result<BilateralView> {
        self.view(self.location_index(target)?, self.location_index(base)?)
    }

    /// Dataset made of the given item rows, in the given order. Rows may
    /// repeat (bootstrap resamples), in which case item labels repeat too.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_items()) {
            return Err(IndexError::Dimension(format!("row {bad} out of range")));
        }
        let items: Vec<String> = rows.iter().map(|&r| self.items[r].clone()).collect();
        let prices = self.prices.select_rows(rows);
        let expenditures = self.expenditures.select_rows(rows);
        Self::build(items.into(), Arc::clone(&self.locations), prices, expenditures)
    }

    /// Dataset restricted to the given locations, in the given order.
    pub fn select_locations(&self, columns: &[usize]) -> Result<Self> {
        for &c in columns {
            self.check_location(c)?;
        }
        let locations: Vec<String> = columns.iter().map(|&c| self.locations[c].clone()).collect();
        check_unique(&locations)?;
        Self::build(
            Arc::clone(&self.items),
            locations.into(),
            self.prices.select_columns(columns),
            self.expenditures.select_columns(columns),
        )
    }

    /// Same data with item rows permuted: row `i` of the result is row `perm[i]`.
    pub fn permute_items(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n_items()];
        if perm.len() != self.n_items() {
            return Err(IndexError::Dimension("permutation length".into()));
        }
        for &p in perm {
            if p >= seen.len() || std::mem::replace(&mut seen[p], true) {
                return Err(IndexError::Dimension("not a permutation".into()));
            }
        }
        self.select_rows(perm)
    }

    /// Change of units: item `n`'s prices are multiplied by `factors[n]` in
    /// every location, quantities by `1 / factors[n]`, so expenditures stay put.
    pub fn rescale_units(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.n_items() {
            return Err(IndexError::Dimension("one factor per item".into()));
        }
        let mut prices = self.prices.clone();
        for (mut row, &c) in prices.row_iter_mut().zip(factors) {
            row *= c;
        }
        Self::build(
            Arc::clone(&self.items),
            Arc::clone(&self.locations),
            prices,
            self.expenditures.clone(),
        )
    }

    /// Swaps the quantity vectors of locations `a` and `b`, keeping prices:
    /// `e'_na = p_na q_nb` and `e'_nb = p_nb q_na`.
    pub fn swap_quantities(&self, a: usize, b: usize) -> Result<Self> {
        self.check_location(a)?;
        self.check_location(b)?;
        let mut e = self.expenditures.clone();
        for n in 0..self.n_items() {
            let q_a = self.expenditures[(n, a)] / self.prices[(n, a)];
            let q_b = self.expenditures[(n, b)] / self.prices[(n, b)];
            e[(n, a)] = self.prices[(n, a)] * q_b;
            e[(n, b)] = self.prices[(n, b)] * q_a;
        }
        Self::build(Arc::clone(&self.items), Arc::clone(&self.locations), self.prices.clone(), e)
    }

    /// Same labels and expenditures, new prices.
    pub fn with_prices(&self, prices: DMatrix<f64>) -> Result<Self> {
        Self::build(
            Arc::clone(&self.items),
            Arc::clone(&self.locations),
            prices,
            self.expenditures.clone(),
        )
    }
}

fn column_total(m: &DMatrix<f64>, j: usize) -> f64 {
    m.column(j).iter().sum()
}

fn check_unique(labels: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(labels.len());
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(IndexError::DuplicateLabel(l.clone()));
        }
    }
    Ok(())
}

struct RawTable {
    header: Vec<String>,
    items: Vec<String>,
    cells: Vec<Vec<String>>,
}

impl RawTable {
    fn parse<R: Read>(source: R, what: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(source);
        let mut records = reader.records();
        let header: Vec<String> = match records.next() {
            Some(r) => r.map_err(|e| IndexError::Csv(e.to_string()))?.iter().map(String::from).collect(),
            None => return Err(IndexError::Csv(format!("{what}: empty file"))),
        };
        let mut items = Vec::new();
        let mut cells = Vec::new();
        for (line, rec) in records.enumerate() {
            let rec = rec.map_err(|e| IndexError::Csv(e.to_string()))?;
            if rec.len() != header.len() {
                return Err(IndexError::Dimension(format!(
                    "{what}: row {} has {} fields, header has {}",
                    line + 2,
                    rec.len(),
                    header.len()
                )));
            }
            items.push(rec[0].to_string());
            cells.push(rec.iter().skip(1).map(String::from).collect());
        }
        Ok(Self { header, items, cells })
    }

    fn into_matrix(self, locations: &[String]) -> Result<(Vec<String>, DMatrix<f64>)> {
        let (n, m) = (self.items.len(), locations.len());
        let mut out = DMatrix::zeros(n, m);
        for (i, row) in self.cells.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                let cell = cell.trim();
                let missing = || IndexError::MissingCell {
                    item: self.items[i].clone(),
                    location: locations[j].clone(),
                };
                if cell.is_empty() {
                    return Err(missing());
                }
                let v: f64 = cell.parse().map_err(|_| {
                    IndexError::Csv(format!(
                        "invalid number '{cell}' at ({},{})",
                        self.items[i], locations[j]
                    ))
                })?;
                if v.is_nan() {
                    return Err(missing());
                }
                out[(i, j)] = v;
            }
        }
        Ok((self.items, out))
    }
}

fn write_matrix<W: Write>(out: W, items: &[String], locations: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| IndexError::Io(e.to_string());
    let mut header = vec!["item".to_string()];
    header.extend(locations.iter().cloned());
    w.write_record(&header).map_err(io)?;
    for (i, item) in items.iter().enumerate() {
        let mut rec = vec![item.clone()];
        rec.extend(m.row(i).iter().map(|&v| g17(v)));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| IndexError::Io(e.to_string()))
}

/// Expenditure shares of one location. Entries sum to one and may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareVector {
    pub location: String,
    pub shares: Vec<f64>,
}

impl ShareVector {
    pub fn from_expenditures(location: &str, expenditures: &[f64]) -> Result<Self> {
        let total: f64 = expenditures.iter().sum();
        if total == 0.0 || !total.is_finite() {
            return Err(IndexError::ZeroTotalExpenditure(location.to_string()));
        }
        Ok(Self {
            location: location.to_string(),
            shares: expenditures.iter().map(|e| e / total).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.shares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shares.is_empty()
    }
}

/// A location reference: column index in the source dataset plus its id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationRef {
    pub index: usize,
    pub id: String,
}

/// The `(j, k)` slice of a dataset: prices, expenditures, price relatives
/// `p_nj / p_nk` and both share vectors, aligned by item.
#[derive(Debug, Clone, PartialEq)]
pub struct BilateralView {
    items: Arc<[String]>,
    target: LocationRef,
    base: LocationRef,
    prices_j: Vec<f64>,
    prices_k: Vec<f64>,
    expenditures_j: Vec<f64>,
    expenditures_k: Vec<f64>,
    price_ratio: Vec<f64>,
    shares_j: ShareVector,
    shares_k: ShareVector,
}

impl BilateralView {
    /// Builds a view from raw columns. `target` plays `j`, `base` plays `k`.
    pub fn from_columns(
        items: Vec<String>,
        target: &str,
        base: &str,
        prices_j: Vec<f64>,
        prices_k: Vec<f64>,
        expenditures_j: Vec<f64>,
        expenditures_k: Vec<f64>,
    ) -> Result<Self> {
        let self_pair = target == base;
        Self::build(
            items.into(),
            (0, target.to_string()),
            (if self_pair { 0 } else { 1 }, base.to_string()),
            prices_j,
            prices_k,
            expenditures_j,
            expenditures_k,
        )
    }

    fn build(
        items: Arc<[String]>,
        target: (usize, String),
        base: (usize, String),
        prices_j: Vec<f64>,
        prices_k: Vec<f64>,
        expenditures_j: Vec<f64>,
        expenditures_k: Vec<f64>,
    ) -> Result<Self> {
        let n = items.len();
        if [prices_j.len(), prices_k.len(), expenditures_j.len(), expenditures_k.len()]
            .iter()
            .any(|&len| len != n)
        {
            return Err(IndexError::Dimension(format!("view columns must all have {n} entries")));
        }
        if n == 0 {
            return Err(IndexError::TooSmall { items: 0, locations: 2 });
        }
        let price_ratio: Vec<f64> = prices_j.iter().zip(&prices_k).map(|(a, b)| a / b).collect();
        for (i, r) in price_ratio.iter().enumerate() {
            if !(r.is_finite() && *r > 0.0) {
                let location = if prices_j[i] > 0.0 { &base.1 } else { &target.1 };
                return Err(IndexError::NonpositivePrice {
                    item: items[i].clone(),
                    location: location.clone(),
                });
            }
        }
        let shares_j = ShareVector::from_expenditures(&target.1, &expenditures_j)?;
        let shares_k = ShareVector::from_expenditures(&base.1, &expenditures_k)?;
        Ok(Self {
            items,
            target: LocationRef { index: target.0, id: target.1 },
            base: LocationRef { index: base.0, id: base.1 },
            prices_j,
            prices_k,
            expenditures_j,
            expenditures_k,
            price_ratio,
            shares_j,
            shares_k,
        })
    }

    /// The `(k, j)` view.
    pub fn reversed(&self) -> Self {
        Self {
            items: Arc::clone(&self.items),
            target: self.base.clone(),
            base: self.target.clone(),
            prices_j: self.prices_k.clone(),
            prices_k: self.prices_j.clone(),
            expenditures_j: self.expenditures_k.clone(),
            expenditures_k: self.expenditures_j.clone(),
            price_ratio: self.prices_k.iter().zip(&self.prices_j).map(|(a, b)| a / b).collect(),
            shares_j: self.shares_k.clone(),
            shares_k: self.shares_j.clone(),
        }
    }

    /// View over a resample of item rows; shares are recomputed from the
    /// resampled expenditures.
    pub fn resample(&self, rows: &[usize]) -> Result<Self> {
        let pick = |v: &[f64]| -> Vec<f64> { rows.iter().map(|&r| v[r]).collect() };
        if rows.iter().any(|&r| r >= self.n_items()) {
            return Err(IndexError::Dimension("resample row out of range".into()));
        }
        let items: Vec<String> = rows.iter().map(|&r| self.items[r].clone()).collect();
        Self::build(
            items.into(),
            (self.target.index, self.target.id.clone()),
            (self.base.index, self.base.id.clone()),
            pick(&self.prices_j),
            pick(&self.prices_k),
            pick(&self.expenditures_j),
            pick(&self.expenditures_k),
        )
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn target(&self) -> &LocationRef {
        &self.target
    }

    pub fn base(&self) -> &LocationRef {
        &self.base
    }

    pub fn is_self_pair(&self) -> bool {
        self.target == self.base
    }

    /// `p_nj / p_nk`.
    pub fn price_ratio(&self) -> &[f64] {
        &self.price_ratio
    }

    pub fn shares_j(&self) -> &ShareVector {
        &self.shares_j
    }

    pub fn shares_k(&self) -> &ShareVector {
        &self.shares_k
    }

    pub fn prices_j(&self) -> &[f64] {
        &self.prices_j
    }

    pub fn prices_k(&self) -> &[f64] {
        &self.prices_k
    }

    pub fn expenditures_j(&self) -> &[f64] {
        &self.expenditures_j
    }

    pub fn expenditures_k(&self) -> &[f64] {
        &self.expenditures_k
    }

    /// Implied quantities `q_nj = e_nj / p_nj`.
    pub fn quantities_j(&self) -> Vec<f64> {
        self.expenditures_j.iter().zip(&self.prices_j).map(|(e, p)| e / p).collect()
    }

    pub fn quantities_k(&self) -> Vec<f64> {
        self.expenditures_k.iter().zip(&self.prices_k).map(|(e, p)| e / p).collect()
    }
}
