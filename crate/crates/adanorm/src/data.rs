//! Data plumbing: delimited-text ingestion, sliding windows, label
//! construction for the mid-price and power tasks, and anchored
//! walk-forward splits.

use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Time-ordered feature matrix plus the designated prediction target
/// column and per-row day ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSeries {
    pub d: usize,
    /// T x d features, row-major.
    pub rows: Vec<f64>,
    /// The column labels are computed from (mid price / active power).
    pub target: Vec<f64>,
    pub day_ids: Vec<i64>,
    /// Precomputed label column, if the file carries one.
    pub labels: Option<Vec<i64>>,
}

impl RawSeries {
    pub fn new(
        d: usize,
        rows: Vec<f64>,
        target: Vec<f64>,
        day_ids: Vec<i64>,
        labels: Option<Vec<i64>>,
    ) -> Result<Self> {
        if d == 0 || !rows.len().is_multiple_of(d) {
            return Err(Error::Data(format!(
                "feature matrix of {} values is not a multiple of width {}",
                rows.len(),
                d
            )));
        }
        let t = rows.len() / d;
        if target.len() != t || day_ids.len() != t {
            return Err(Error::Data("target/day length must match row count".into()));
        }
        if let Some(l) = &labels {
            if l.len() != t {
                return Err(Error::Data("label length must match row count".into()));
            }
        }
        Ok(RawSeries { d, rows, target, day_ids, labels })
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t * self.d..(t + 1) * self.d]
    }

    pub fn feature_rows(&self) -> impl Iterator<Item = &[f64]> + Clone {
        self.rows.chunks(self.d)
    }
}

/// Column map for delimited-text ingestion. All indices refer to raw file
/// columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub feature_cols: Vec<usize>,
    pub target_col: usize,
    pub day_col: Option<usize>,
    pub label_col: Option<usize>,
    /// None: autodetect (semicolon if the first line has one, else comma).
    pub delimiter: Option<char>,
}

impl CsvSchema {
    pub fn new(feature_cols: Vec<usize>, target_col: usize) -> Self {
        CsvSchema {
            feature_cols,
            target_col,
            day_col: None,
            label_col: None,
            delimiter: None,
        }
    }

    fn max_col(&self) -> usize {
        let mut m = self.target_col;
        for &c in &self.feature_cols {
            m = m.max(c);
        }
        if let Some(c) = self.day_col {
            m = m.max(c);
        }
        if let Some(c) = self.label_col {
            m = m.max(c);
        }
        m
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub cells_filled: usize,
    pub header_skipped: bool,
}

fn is_missing(tok: &str) -> bool {
    let t = tok.trim();
    t.is_empty() || t == "?"
}

fn parse_cell(tok: &str, line_no: usize) -> Result<f64> {
    tok.trim().parse::<f64>().map_err(|_| Error::Parse {
        line: line_no,
        msg: format!("cannot parse '{}' as a number", tok.trim()),
    })
}

/// Loads a delimited text file of one time step per row. Missing markers
/// ("?" or empty) are forward-filled within a day; rows whose gaps cannot
/// be filled (leading gaps of a day) are dropped and counted.
pub fn load_feature_csv(path: &Path, schema: &CsvSchema) -> Result<(RawSeries, IngestReport)> {
    let text = fs::read_to_string(path)?;
    load_feature_text(&text, schema)
}

pub fn load_feature_text(text: &str, schema: &CsvSchema) -> Result<(RawSeries, IngestReport)> {
    if schema.feature_cols.is_empty() {
        return Err(Error::Config("schema lists no feature columns".into()));
    }
    let mut report = IngestReport::default();
    let d = schema.feature_cols.len();
    let mut rows: Vec<f64> = Vec::new();
    let mut target: Vec<f64> = Vec::new();
    let mut day_ids: Vec<i64> = Vec::new();
    let mut labels: Vec<i64> = Vec::new();

    let mut delim: Option<char> = schema.delimiter;
    // last seen value per watched column, for forward fill; reset per day
    let mut last_seen: Vec<Option<f64>> = vec![None; schema.max_col() + 1];
    let mut current_day: Option<i64> = None;
    let mut first_data_line = true;

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let delim = *delim.get_or_insert_with(|| if line.contains(';') { ';' } else { ',' });
        let fields: Vec<&str> = line.split(delim).collect();

        if first_data_line {
            // a header line has non-numeric, non-missing tokens in the
            // watched columns
            let looks_like_header = schema
                .feature_cols
                .iter()
                .chain(std::iter::once(&schema.target_col))
                .any(|&c| {
                    fields
                        .get(c)
                        .is_some_and(|t| !is_missing(t) && t.trim().parse::<f64>().is_err())
                });
            first_data_line = false;
            if looks_like_header {
                report.header_skipped = true;
                continue;
            }
        }

        if fields.len() <= schema.max_col() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!(
                    "row has {} columns, schema needs at least {}",
                    fields.len(),
                    schema.max_col() + 1
                ),
            });
        }
        report.rows_read += 1;

        // day first: forward fill of other columns resets at day changes
        let day = match schema.day_col {
            Some(c) => {
                let tok = fields[c].trim();
                if is_missing(tok) {
                    match current_day {
                        Some(d) => d,
                        None => {
                            report.rows_dropped += 1;
                            continue;
                        }
                    }
                } else {
                    tok.parse::<i64>()
                        .or_else(|_| parse_cell(tok, line_no).map(|v| v as i64))?
                }
            }
            None => 0,
        };
        if current_day != Some(day) {
            last_seen.iter_mut().for_each(|v| *v = None);
            current_day = Some(day);
        }

        let mut fetch = |c: usize, filled: &mut usize| -> Result<Option<f64>> {
            let tok = fields[c];
            if is_missing(tok) {
                if let Some(v) = last_seen[c] {
                    *filled += 1;
                    Ok(Some(v))
                } else {
                    Ok(None)
                }
            } else {
                let v = parse_cell(tok, line_no)?;
                last_seen[c] = Some(v);
                Ok(Some(v))
            }
        };

        let mut filled = 0usize;
        let mut feat_row = Vec::with_capacity(d);
        let mut complete = true;
        for &c in &schema.feature_cols {
            match fetch(c, &mut filled)? {
                Some(v) => feat_row.push(v),
                None => {
                    complete = false;
                    break;
                }
            }
        }
        let tgt = if complete { fetch(schema.target_col, &mut filled)? } else { None };
        let lab = match (complete, schema.label_col) {
            (true, Some(c)) => fetch(c, &mut filled)?.map(|v| v as i64),
            (true, None) => Some(0),
            (false, _) => None,
        };

        match (complete, tgt, lab) {
            (true, Some(tv), Some(lv)) => {
                report.cells_filled += filled;
                rows.extend_from_slice(&feat_row);
                target.push(tv);
                day_ids.push(day);
                if schema.label_col.is_some() {
                    labels.push(lv);
                }
            }
            _ => {
                report.rows_dropped += 1;
            }
        }
    }

    if target.is_empty() {
        return Err(Error::Data("no usable rows after ingestion".into()));
    }
    let labels = if schema.label_col.is_some() { Some(labels) } else { None };
    let series = RawSeries::new(d, rows, target, day_ids, labels)?;
    Ok((series, report))
}

/// Windows plus labels; the unit the models consume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowedDataset {
    pub l: usize,
    pub d: usize,
    pub n_classes: usize,
    pub windows: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub day_ids: Vec<i64>,
    /// Row index (into the source series) of each window's last row.
    pub end_rows: Vec<usize>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Sliding windows of length `l`, stride 1, never crossing a day boundary.
/// Days shorter than `l` contribute nothing (their count is returned).
pub fn make_windows(series: &RawSeries, l: usize) -> Result<(WindowedDataset, usize)> {
    if l < 1 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    let mut windows = Vec::new();
    let mut day_ids = Vec::new();
    let mut end_rows = Vec::new();
    let mut skipped_days = 0usize;

    let t_total = series.len();
    let mut start = 0usize;
    while start < t_total {
        let day = series.day_ids[start];
        let mut end = start;
        while end < t_total && series.day_ids[end] == day {
            end += 1;
        }
        let day_len = end - start;
        if day_len < l {
            skipped_days += 1;
        } else {
            for t in start + l - 1..end {
                let lo = t + 1 - l;
                let mut values = Vec::with_capacity(l * series.d);
                for r in lo..=t {
                    values.extend_from_slice(series.row(r));
                }
                windows.push(Tensor::new(vec![l, series.d], values)?);
                day_ids.push(day);
                end_rows.push(t);
            }
        }
        start = end;
    }

    Ok((
        WindowedDataset {
            l,
            d: series.d,
            n_classes: 0,
            labels: Vec::new(),
            windows,
            day_ids,
            end_rows,
        },
        skipped_days,
    ))
}

pub const UP: usize = 0;
pub const STATIONARY: usize = 1;
pub const DOWN: usize = 2;

/// Direction of the average target over the next `h` steps relative to the
/// value at `t`: stationary iff |relative change| < theta (strict), else
/// up/down by sign.
pub fn label_midprice(target: &[f64], t: usize, h: usize, theta: f64) -> Result<usize> {
    if h == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    if t + h > target.len() - 1 {
        return Err(Error::Data(format!(
            "label horizon t={} h={} extends past series end {}",
            t,
            h,
            target.len()
        )));
    }
    let mid_t = target[t];
    if mid_t == 0.0 {
        return Err(Error::math("label_midprice", "reference mid price is zero"));
    }
    let future: f64 = target[t + 1..=t + h].iter().sum::<f64>() / h as f64;
    let r = (future - mid_t) / mid_t;
    Ok(if r.abs() < theta {
        STATIONARY
    } else if r > 0.0 {
        UP
    } else {
        DOWN
    })
}

pub const INCREASE: usize = 0;
pub const DECREASE: usize = 1;

/// Whether the average target over the next 10 steps exceeds the average
/// over the previous 20 (inclusive of `t`); ties count as decrease.
pub fn label_power(target: &[f64], t: usize) -> Result<usize> {
    const PAST: usize = 20;
    const FUTURE: usize = 10;
    if t + 1 < PAST {
        return Err(Error::Data(format!("need {} steps of history at t={}", PAST, t)));
    }
    if t + FUTURE > target.len() - 1 {
        return Err(Error::Data(format!(
            "label needs {} future steps at t={}, series has {}",
            FUTURE,
            t,
            target.len()
        )));
    }
    let past: f64 = target[t + 1 - PAST..=t].iter().sum::<f64>() / PAST as f64;
    let future: f64 = target[t + 1..=t + FUTURE].iter().sum::<f64>() / FUTURE as f64;
    Ok(if future > past { INCREASE } else { DECREASE })
}

/// Labels every window by mid-price direction, dropping windows whose
/// horizon runs past their day (or the series) end. Returns the labeled
/// dataset and the dropped-window count.
pub fn label_windows_midprice(
    ds: WindowedDataset,
    series: &RawSeries,
    h: usize,
    theta: f64,
) -> Result<(WindowedDataset, usize)> {
    let mut out = WindowedDataset {
        l: ds.l,
        d: ds.d,
        n_classes: 3,
        windows: Vec::with_capacity(ds.windows.len()),
        labels: Vec::with_capacity(ds.windows.len()),
        day_ids: Vec::new(),
        end_rows: Vec::new(),
    };
    let mut dropped = 0usize;
    let t_total = series.len();
    for (i, w) in ds.windows.into_iter().enumerate() {
        let t = ds.end_rows[i];
        let day = ds.day_ids[i];
        let horizon_ok = t + h < t_total && series.day_ids[t + h] == day;
        if !horizon_ok {
            dropped += 1;
            continue;
        }
        out.labels.push(label_midprice(&series.target, t, h, theta)?);
        out.windows.push(w);
        out.day_ids.push(day);
        out.end_rows.push(t);
    }
    Ok((out, dropped))
}

/// Labels every window by the power rule, dropping windows lacking the
/// 20-step history or 10-step future.
pub fn label_windows_power(
    ds: WindowedDataset,
    series: &RawSeries,
) -> Result<(WindowedDataset, usize)> {
    let mut out = WindowedDataset {
        l: ds.l,
        d: ds.d,
        n_classes: 2,
        windows: Vec::with_capacity(ds.windows.len()),
        labels: Vec::with_capacity(ds.windows.len()),
        day_ids: Vec::new(),
        end_rows: Vec::new(),
    };
    let mut dropped = 0usize;
    let t_total = series.len();
    for (i, w) in ds.windows.into_iter().enumerate() {
        let t = ds.end_rows[i];
        if t + 1 < 20 || t + 10 > t_total - 1 {
            dropped += 1;
            continue;
        }
        out.labels.push(label_power(&series.target, t)?);
        out.windows.push(w);
        out.day_ids.push(ds.day_ids[i]);
        out.end_rows.push(t);
    }
    Ok((out, dropped))
}

/// Takes precomputed per-row labels: a window's label is the label at its
/// end row, shifted by `offset` (e.g. 1 for files labeled 1..=n).
pub fn label_windows_precomputed(
    ds: WindowedDataset,
    series: &RawSeries,
    offset: i64,
    n_classes: usize,
) -> Result<WindowedDataset> {
    let raw = series
        .labels
        .as_ref()
        .ok_or_else(|| Error::Data("series carries no precomputed labels".into()))?;
    let mut out = ds;
    out.n_classes = n_classes;
    out.labels = Vec::with_capacity(out.windows.len());
    for &t in &out.end_rows {
        let v = raw[t] - offset;
        if v < 0 || v as usize >= n_classes {
            return Err(Error::Data(format!(
                "precomputed label {} at row {} out of range after offset {}",
                raw[t], t, offset
            )));
        }
        out.labels.push(v as usize);
    }
    Ok(out)
}

/// Expanding walk-forward plan: fold k trains on days 1..k and tests on
/// day k+1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub folds: Vec<Fold>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub train_days: Vec<i64>,
    pub test_day: i64,
}

pub fn anchored_folds(day_ids: &[i64]) -> Result<SplitPlan> {
    let mut days: Vec<i64> = day_ids.to_vec();
    days.sort_unstable();
    days.dedup();
    if days.len() < 2 {
        return Err(Error::Data(format!(
            "anchored folds need at least 2 distinct days, found {}",
            days.len()
        )));
    }
    let folds = (1..days.len())
        .map(|k| Fold {
            train_days: days[..k].to_vec(),
            test_day: days[k],
        })
        .collect();
    Ok(SplitPlan { folds })
}

impl SplitPlan {
    /// Index ranges (train, test) per fold into a dataset whose windows are
    /// sorted by day.
    pub fn fold_ranges(&self, ds: &WindowedDataset) -> Result<Vec<(Range<usize>, Range<usize>)>> {
        if ds.day_ids.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Data("windows are not sorted by day".into()));
        }
        let mut out = Vec::with_capacity(self.folds.len());
        for fold in &self.folds {
            let last_train = *fold.train_days.last().expect("folds have train days");
            let train_end = ds.day_ids.partition_point(|&d| d <= last_train);
            let test_start = ds.day_ids.partition_point(|&d| d < fold.test_day);
            let test_end = ds.day_ids.partition_point(|&d| d <= fold.test_day);
            out.push((0..train_end, test_start..test_end));
        }
        Ok(out)
    }
}

/// Chronological head/tail split by fraction (e.g. 0.9 for 90/10).
pub fn chrono_split(n: usize, train_frac: f64) -> Result<(Range<usize>, Range<usize>)> {
    if !(0.0..1.0).contains(&train_frac) || train_frac == 0.0 {
        return Err(Error::Config(format!(
            "train fraction must be in (0,1), got {}",
            train_frac
        )));
    }
    let cut = ((n as f64) * train_frac).floor() as usize;
    if cut == 0 || cut == n {
        return Err(Error::Data(format!(
            "split leaves an empty side ({} of {})",
            cut, n
        )));
    }
    Ok((0..cut, cut..n))
}

/// Writes a series as delimited text the loader reads back unchanged:
/// features first, then target, day, and (if present) label columns.
pub fn write_series_csv(path: &Path, series: &RawSeries) -> Result<()> {
    let mut out = String::new();
    for k in 0..series.d {
        out.push_str(&format!("f{},", k));
    }
    out.push_str("target,day");
    if series.labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for t in 0..series.len() {
        for v in series.row(t) {
            out.push_str(&format!("{},", v));
        }
        out.push_str(&format!("{},{}", series.target[t], series.day_ids[t]));
        if let Some(labels) = &series.labels {
            out.push_str(&format!(",{}", labels[t]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Column map matching `write_series_csv` output.
pub fn emitted_schema(d: usize, with_labels: bool) -> CsvSchema {
    let mut schema = CsvSchema::new((0..d).collect(), d);
    schema.day_col = Some(d + 1);
    if with_labels {
        schema.label_col = Some(d + 2);
    }
    schema
}

impl WindowedDataset {
    /// Appends another dataset's windows; dims and class counts must match.
    pub fn concat(mut self, other: WindowedDataset) -> Result<WindowedDataset> {
        if self.l != other.l || self.d != other.d || self.n_classes != other.n_classes {
            return Err(Error::Data(format!(
                "cannot concat {}x{}/{} classes with {}x{}/{} classes",
                self.l, self.d, self.n_classes, other.l, other.d, other.n_classes
            )));
        }
        self.windows.extend(other.windows);
        self.labels.extend(other.labels);
        self.day_ids.extend(other.day_ids);
        self.end_rows.extend(other.end_rows);
        Ok(self)
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetCacheFile {
    format: String,
    version: u32,
    dataset: WindowedDataset,
}

const DATASET_FORMAT: &str = "adanorm.dataset";
const DATASET_VERSION: u32 = 1;

pub fn save_dataset(path: &Path, ds: &WindowedDataset) -> Result<()> {
    let file = DatasetCacheFile {
        format: DATASET_FORMAT.to_string(),
        version: DATASET_VERSION,
        dataset: ds.clone(),
    };
    let json = serde_json::to_string(&file)?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<WindowedDataset> {
    let text = fs::read_to_string(path)?;
    let file: DatasetCacheFile = serde_json::from_str(&text)?;
    if file.format != DATASET_FORMAT {
        return Err(Error::Data(format!("not a dataset cache: {}", file.format)));
    }
    if file.version != DATASET_VERSION {
        return Err(Error::Data(format!(
            "unsupported dataset cache version {}",
            file.version
        )));
    }
    Ok(file.dataset)
}
