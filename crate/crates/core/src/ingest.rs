//! Per-core raw series and their alignment onto one sorted time axis.
//!
//! Raw files are two-column CSV (`age_yr_bp,d18o`) with ages in years BP.
//! Internally every age is held in thousands of years (k cal yr BP). An
//! optional JSON sidecar next to the CSV (`<stem>.json`) carries the core id
//! and the section length used to derive nugget scale factors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fmt::float;

/// Default tolerance (k yr) under which two ages are treated as equal.
pub const DEFAULT_TIME_TOLERANCE: f64 = 1e-9;

/// One core's observations, sorted by age with duplicates merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreSeries {
    pub core_id: String,
    /// Ages in k cal yr BP, strictly increasing.
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Length of the measured section (cm), when known.
    pub section_length: Option<f64>,
}

impl CoreSeries {
    /// Canonicalize raw `(time, value)` pairs: sort ascending and average
    /// observations whose times agree within [`DEFAULT_TIME_TOLERANCE`].
    pub fn new(
        core_id: impl Into<String>,
        times: Vec<f64>,
        values: Vec<f64>,
        section_length: Option<f64>,
    ) -> Result<Self> {
        let core_id = core_id.into();
        if times.len() != values.len() {
            return Err(invalid(format!(
                "core {core_id}: {} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if let Some(i) = times
            .iter()
            .chain(&values)
            .position(|v| !v.is_finite())
        {
            return Err(invalid(format!("core {core_id}: non-finite entry at {i}")));
        }
        if let Some(len) = section_length {
            if !(len > 0.0) {
                return Err(invalid(format!("core {core_id}: section length must be positive")));
            }
        }
        let mut pairs: Vec<(f64, f64)> = times.into_iter().zip(values).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut out_t: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut out_v: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut i = 0;
        while i < pairs.len() {
            let anchor = pairs[i].0;
            let mut j = i + 1;
            while j < pairs.len() && pairs[j].0 - anchor <= DEFAULT_TIME_TOLERANCE {
                j += 1;
            }
            let group = &pairs[i..j];
            if group.len() > 1 {
                log::warn!(
                    "core {core_id}: {} observations at age {anchor} k yr averaged",
                    group.len()
                );
            }
            let k = group.len() as f64;
            out_t.push(group.iter().map(|p| p.0).sum::<f64>() / k);
            out_v.push(group.iter().map(|p| p.1).sum::<f64>() / k);
            i = j;
        }
        if out_t.len() < 2 {
            return Err(invalid(format!(
                "core {core_id}: need at least 2 distinct observations, got {}",
                out_t.len()
            )));
        }
        Ok(Self {
            core_id,
            times: out_t,
            values: out_v,
            section_length,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Gaps between consecutive ages, in k yr.
    pub fn increments(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Sidecar metadata for a core CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreMetadata {
    pub core_id: String,
    #[serde(default)]
    pub section_length_cm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Read a `age_yr_bp,d18o` CSV. Lines starting with `#` are ignored.
pub fn load_core_csv(
    path: &Path,
    core_id: &str,
    section_length: Option<f64>,
) -> Result<CoreSeries> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "age_yr_bp" || &headers[1] != "d18o" {
        return Err(parse_err(
            1,
            format!("expected header `age_yr_bp,d18o`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |col: usize, name: &str| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("column {name}: cannot parse `{raw}` as a number")))
        };
        let age = field(0, "age_yr_bp")?;
        let value = field(1, "d18o")?;
        times.push(age / 1000.0);
        values.push(value);
    }
    if times.len() < 2 {
        return Err(parse_err(0, format!("need at least 2 data rows, found {}", times.len())));
    }
    CoreSeries::new(core_id, times, values, section_length)
}

/// Path of the metadata sidecar for a core CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Load a core CSV together with its sidecar metadata when present.
/// Without a sidecar, the file stem is used as the core id.
pub fn load_core(csv_path: &Path) -> Result<CoreSeries> {
    let sidecar = sidecar_path(csv_path);
    let meta = if sidecar.exists() {
        let text = fs::read_to_string(&sidecar).map_err(io_err(&sidecar))?;
        serde_json::from_str::<CoreMetadata>(&text)?
    } else {
        CoreMetadata {
            core_id: csv_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "core".to_string()),
            section_length_cm: None,
            config_sha256: None,
            seed: None,
        }
    };
    load_core_csv(csv_path, &meta.core_id, meta.section_length_cm)
}

/// Write a core in the canonical CSV format plus its sidecar, optionally
/// stamped with the producing run's config hash and seed.
pub fn write_core(
    series: &CoreSeries,
    csv_path: &Path,
    provenance: Option<(&str, u64)>,
) -> Result<()> {
    let mut out = Vec::new();
    if let Some((hash, seed)) = provenance {
        writeln!(out, "# config_sha256={hash}").expect("vec write");
        writeln!(out, "# seed={seed}").expect("vec write");
    }
    writeln!(out, "age_yr_bp,d18o").expect("vec write");
    for (t, v) in series.times.iter().zip(&series.values) {
        writeln!(out, "{},{}", float(t * 1000.0), float(*v)).expect("vec write");
    }
    fs::write(csv_path, out).map_err(io_err(csv_path))?;
    let meta = CoreMetadata {
        core_id: series.core_id.clone(),
        section_length_cm: series.section_length,
        config_sha256: provenance.map(|p| p.0.to_string()),
        seed: provenance.map(|p| p.1),
    };
    let sidecar = sidecar_path(csv_path);
    fs::write(&sidecar, crate::fmt::to_json(&meta)?).map_err(io_err(&sidecar))?;
    Ok(())
}

/// All cores merged onto the sorted union of their observation times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedDataset {
    /// Sorted unique times `t_o`.
    pub times: Vec<f64>,
    /// Per time index, the `(core, value)` pairs observed there (core ascending).
    pub obs: Vec<Vec<(usize, f64)>>,
    /// Nugget scale `k_c` per core; the reference core has `k = 1`.
    pub k_factors: Vec<f64>,
    pub labels: Vec<String>,
    pub reference: usize,
    /// Section lengths carried through for reporting.
    pub section_lengths: Vec<Option<f64>>,
}

impl AlignedDataset {
    pub fn n_cores(&self) -> usize {
        self.labels.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// Total observation count `N = Σ n_c`.
    pub fn n_obs(&self) -> usize {
        self.obs.iter().map(Vec::len).sum()
    }

    pub fn counts_per_core(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_cores()];
        for row in &self.obs {
            for &(c, _) in row {
                counts[c] += 1;
            }
        }
        counts
    }

    /// Observations of one core as a series (k = 1, own id).
    pub fn core_series(&self, core: usize) -> Result<CoreSeries> {
        let (times, values): (Vec<f64>, Vec<f64>) = self
            .times
            .iter()
            .zip(&self.obs)
            .filter_map(|(t, row)| row.iter().find(|(c, _)| *c == core).map(|(_, v)| (*t, *v)))
            .unzip();
        CoreSeries::new(
            self.labels[core].clone(),
            times,
            values,
            self.section_lengths[core],
        )
    }

    /// Single-core dataset for core `core`, which becomes its own reference.
    pub fn single_core(&self, core: usize) -> Result<AlignedDataset> {
        if core >= self.n_cores() {
            return Err(invalid(format!("core index {core} out of range")));
        }
        let mut times = Vec::new();
        let mut obs = Vec::new();
        for (t, row) in self.times.iter().zip(&self.obs) {
            if let Some(&(_, v)) = row.iter().find(|(c, _)| *c == core) {
                times.push(*t);
                obs.push(vec![(0, v)]);
            }
        }
        let ds = AlignedDataset {
            times,
            obs,
            k_factors: vec![1.0],
            labels: vec![self.labels[core].clone()],
            reference: 0,
            section_lengths: vec![self.section_lengths[core]],
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.n_cores();
        if m == 0 || self.times.is_empty() {
            return Err(invalid("dataset is empty"));
        }
        if self.obs.len() != self.times.len() || self.k_factors.len() != m {
            return Err(invalid("dataset arrays have inconsistent lengths"));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("dataset times are not strictly increasing"));
        }
        for row in &self.obs {
            if row.is_empty() {
                return Err(invalid("dataset contains a time with no observation"));
            }
            if row.windows(2).any(|w| w[0].0 >= w[1].0) || row.iter().any(|(c, _)| *c >= m) {
                return Err(invalid("dataset has a duplicated or unknown core at one time"));
            }
        }
        if let Some(c) = self.counts_per_core().iter().position(|&n| n == 0) {
            return Err(invalid(format!("core {} has no observations", self.labels[c])));
        }
        if self.k_factors.iter().any(|k| !(*k > 0.0)) {
            return Err(invalid("nugget scale factors must be positive"));
        }
        if self.k_factors[self.reference] != 1.0 {
            return Err(invalid("reference core must have k = 1"));
        }
        Ok(())
    }
}

/// Merge cores onto the union of their times. Times of different cores that
/// fall within `time_tolerance` of a cluster's first time share one node;
/// two observations of the same core in one cluster are an error.
pub fn align(
    cores: &[CoreSeries],
    reference_core: &str,
    time_tolerance: f64,
) -> Result<AlignedDataset> {
    if cores.is_empty() {
        return Err(invalid("no cores to align"));
    }
    if let Some(c) = cores.iter().find(|c| c.is_empty()) {
        return Err(invalid(format!("core {} is empty", c.core_id)));
    }
    let reference = cores
        .iter()
        .position(|c| c.core_id == reference_core)
        .ok_or_else(|| invalid(format!("reference core `{reference_core}` not found")))?;
    if !(time_tolerance >= 0.0) {
        return Err(invalid("time tolerance must be non-negative"));
    }

    let mut all: Vec<(f64, usize, f64)> = cores
        .iter()
        .enumerate()
        .flat_map(|(c, s)| s.times.iter().zip(&s.values).map(move |(t, v)| (*t, c, *v)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut times = Vec::new();
    let mut obs: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut i = 0;
    while i < all.len() {
        let anchor = all[i].0;
        let mut j = i + 1;
        while j < all.len() && all[j].0 - anchor <= time_tolerance {
            j += 1;
        }
        let mut row: Vec<(usize, f64)> = all[i..j].iter().map(|&(_, c, v)| (c, v)).collect();
        row.sort_by_key(|p| p.0);
        if let Some(w) = row.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(invalid(format!(
                "time tolerance {time_tolerance} merges two observations of core {} near {anchor}",
                cores[w[0].0].core_id
            )));
        }
        let k = (j - i) as f64;
        times.push(all[i..j].iter().map(|p| p.0).sum::<f64>() / k);
        obs.push(row);
        i = j;
    }

    let ref_len = cores[reference].section_length;
    let k_factors = cores
        .iter()
        .map(|c| match (ref_len, c.section_length) {
            (Some(r), Some(o)) => crate::variogram::support_ratio(r, o),
            _ => Ok(1.0),
        })
        .collect::<Result<Vec<_>>>()?;

    let ds = AlignedDataset {
        times,
        obs,
        k_factors,
        labels: cores.iter().map(|c| c.core_id.clone()).collect(),
        reference,
        section_lengths: cores.iter().map(|c| c.section_length).collect(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Keep only times inside `[t_min, t_max]`.
pub fn restrict(dataset: &AlignedDataset, t_min: f64, t_max: f64) -> Result<AlignedDataset> {
    if !(t_min < t_max) {
        return Err(invalid("restrict window needs t_min < t_max"));
    }
    let (times, obs): (Vec<f64>, Vec<Vec<(usize, f64)>>) = dataset
        .times
        .iter()
        .zip(&dataset.obs)
        .filter(|(t, _)| **t >= t_min && **t <= t_max)
        .map(|(t, o)| (*t, o.clone()))
        .unzip();
    let out = AlignedDataset {
        times,
        obs,
        ..dataset.clone()
    };
    let counts = out.counts_per_core();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(invalid(format!(
            "window [{t_min}, {t_max}] leaves core {} without observations",
            dataset.labels[c]
        )));
    }
    out.validate()?;
    Ok(out)
}

/// Restrict a single series to `[t_min, t_max]`.
pub fn restrict_series(series: &CoreSeries, t_min: f64, t_max: f64) -> Result<CoreSeries> {
    let (times, values) = series
        .times
        .iter()
        .zip(&series.values)
        .filter(|(t, _)| **t >= t_min && **t <= t_max)
        .map(|(t, v)| (*t, *v))
        .unzip();
    CoreSeries::new(series.core_id.clone(), times, values, series.section_length)
}
