//! Multi-domain time-series datasets: synthetic generation, leave-one-domain-out
//! splitting and the `ERIS-CSV` exchange format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Rng;

/// Samples are stored flat, `[num_samples × channels × length]`, channel-major
/// within a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    channels: usize,
    length: usize,
    num_classes: usize,
    num_domains: usize,
    values: Vec<f64>,
    class_labels: Vec<usize>,
    domain_labels: Vec<usize>,
}

impl TimeSeriesDataset {
    pub fn new(
        channels: usize,
        length: usize,
        num_classes: usize,
        num_domains: usize,
        values: Vec<f64>,
        class_labels: Vec<usize>,
        domain_labels: Vec<usize>,
    ) -> Result<Self> {
        if channels == 0 || length == 0 {
            return Err(Error::InvalidArgument(
                "channels and length must be at least 1".into(),
            ));
        }
        if num_classes == 0 || num_domains == 0 {
            return Err(Error::InvalidArgument(
                "class and domain counts must be at least 1".into(),
            ));
        }
        let n = class_labels.len();
        if domain_labels.len() != n || values.len() != n * channels * length {
            return Err(Error::InvalidArgument(format!(
                "inconsistent dataset sizes: {} class labels, {} domain labels, {} values for {}x{} samples",
                n,
                domain_labels.len(),
                values.len(),
                channels,
                length
            )));
        }
        if let Some(&bad) = class_labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::IndexOutOfRange {
                what: "class label",
                index: bad,
                size: num_classes,
            });
        }
        if let Some(&bad) = domain_labels.iter().find(|&&d| d >= num_domains) {
            return Err(Error::IndexOutOfRange {
                what: "domain label",
                index: bad,
                size: num_domains,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset values".into()));
        }
        Ok(Self {
            channels,
            length,
            num_classes,
            num_domains,
            values,
            class_labels,
            domain_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.class_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.length
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let w = self.sample_len();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn class_label(&self, i: usize) -> usize {
        self.class_labels[i]
    }

    pub fn domain_label(&self, i: usize) -> usize {
        self.domain_labels[i]
    }

    pub fn class_labels(&self) -> &[usize] {
        &self.class_labels
    }

    pub fn domain_labels(&self) -> &[usize] {
        &self.domain_labels
    }

    /// New dataset holding the given samples in the given order.
    pub fn subset(&self, indices: &[usize]) -> TimeSeriesDataset {
        let w = self.sample_len();
        let mut values = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            values.extend_from_slice(self.sample(i));
        }
        TimeSeriesDataset {
            channels: self.channels,
            length: self.length,
            num_classes: self.num_classes,
            num_domains: self.num_domains,
            values,
            class_labels: indices.iter().map(|&i| self.class_labels[i]).collect(),
            domain_labels: indices.iter().map(|&i| self.domain_labels[i]).collect(),
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &y in &self.class_labels {
            h[y] += 1;
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub num_domains: usize,
    pub channels: usize,
    pub length: usize,
    pub samples_per_domain_class: usize,
    pub domain_scale_range: (f64, f64),
    pub domain_offset_range: (f64, f64),
    pub noise_stddev: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            num_domains: 4,
            channels: 3,
            length: 32,
            samples_per_domain_class: 20,
            domain_scale_range: (0.6, 1.6),
            domain_offset_range: (-0.3, 0.3),
            noise_stddev: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_classes", self.num_classes),
            ("num_domains", self.num_domains),
            ("channels", self.channels),
            ("length", self.length),
            ("samples_per_domain_class", self.samples_per_domain_class),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        for (name, (lo, hi)) in [
            ("domain_scale_range", self.domain_scale_range),
            ("domain_offset_range", self.domain_offset_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be an ordered finite pair, got ({lo}, {hi})"
                )));
            }
        }
        if !(self.noise_stddev >= 0.0 && self.noise_stddev.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise_stddev must be non-negative, got {}",
                self.noise_stddev
            )));
        }
        Ok(())
    }

    /// Per-domain `(amplitude scale, additive offset)`.
    ///
    /// Offsets are evenly spaced over the offset range in domain order. Scales
    /// are evenly spaced over the scale range and assigned to domains in a
    /// seed-dependent order, so scale and offset are not collinear.
    pub fn domain_effects(&self) -> Vec<(f64, f64)> {
        let n = self.num_domains;
        let grid = |(lo, hi): (f64, f64), j: usize| {
            if n == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * j as f64 / (n - 1) as f64
            }
        };
        let mut order: Vec<usize> = (0..n).collect();
        Rng::new(self.seed).split(0xD0_4A17).shuffle(&mut order);
        (0..n)
            .map(|j| (grid(self.domain_scale_range, order[j]), grid(self.domain_offset_range, j)))
            .collect()
    }
}

/// Class `k` is a sinusoid with `k + 1` full periods over the window (one
/// phase per channel); domain `j` multiplies it by its scale and adds its
/// offset; i.i.d. Gaussian noise goes on top. Samples are laid out domain-major,
/// then class, then replicate.
pub fn gen_synthetic(config: &SyntheticConfig) -> Result<TimeSeriesDataset> {
    config.validate()?;
    let effects = config.domain_effects();
    let (c, n) = (config.channels, config.length);
    let total = config.num_domains * config.num_classes * config.samples_per_domain_class;
    let root = Rng::new(config.seed);

    let mut values = Vec::with_capacity(total * c * n);
    let mut class_labels = Vec::with_capacity(total);
    let mut domain_labels = Vec::with_capacity(total);
    let mut index = 0u64;
    for (domain, &(scale, offset)) in effects.iter().enumerate() {
        for class in 0..config.num_classes {
            for _ in 0..config.samples_per_domain_class {
                let mut noise = root.split(index + 1);
                index += 1;
                for ch in 0..c {
                    let phase = ch as f64 * std::f64::consts::FRAC_PI_4;
                    for t in 0..n {
                        let angle = std::f64::consts::TAU * (class + 1) as f64 * t as f64
                            / n as f64
                            + phase;
                        let mut v = scale * angle.sin() + offset;
                        if config.noise_stddev > 0.0 {
                            v += config.noise_stddev * noise.standard_normal();
                        }
                        values.push(v);
                    }
                }
                class_labels.push(class);
                domain_labels.push(domain);
            }
        }
    }
    TimeSeriesDataset::new(
        c,
        n,
        config.num_classes,
        config.num_domains,
        values,
        class_labels,
        domain_labels,
    )
}

/// `(train, test)`: every sample of `target_domain` goes to test, the rest to
/// train, preserving relative order in both.
pub fn lodo_split(
    ds: &TimeSeriesDataset,
    target_domain: usize,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    if target_domain >= ds.num_domains {
        return Err(Error::IndexOutOfRange {
            what: "target domain",
            index: target_domain,
            size: ds.num_domains,
        });
    }
    let (test, train): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| ds.domain_labels[i] == target_domain);
    Ok((ds.subset(&train), ds.subset(&test)))
}

pub const CSV_MAGIC: &str = "ERIS-CSV";

pub(crate) fn fmt_f64(out: &mut String, v: f64) {
    // 17 significant digits: exact f64 round trip
    write!(out, "{v:.16e}").expect("write to String");
}

pub fn to_csv_string(ds: &TimeSeriesDataset) -> String {
    let mut out = String::with_capacity(ds.values.len() * 24 + 64);
    writeln!(
        out,
        "{CSV_MAGIC},1,{},{},{},{},{}",
        ds.len(),
        ds.channels,
        ds.length,
        ds.num_classes,
        ds.num_domains
    )
    .expect("write to String");
    for i in 0..ds.len() {
        write!(out, "{},{}", ds.class_labels[i], ds.domain_labels[i]).expect("write to String");
        for &v in ds.sample(i) {
            out.push(',');
            fmt_f64(&mut out, v);
        }
        out.push('\n');
    }
    out
}

pub fn save_dataset(ds: &TimeSeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_csv_string(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<TimeSeriesDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

pub fn parse_csv(text: &str, path: &Path) -> Result<TimeSeriesDataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file, expected ERIS-CSV header"))?;
    let fields: Vec<&str> = header.trim().split(',').collect();
    if fields.len() != 7 || fields[0] != CSV_MAGIC {
        return Err(Error::parse(
            path,
            1,
            "malformed header, expected `ERIS-CSV,1,<num_samples>,<channels>,<length>,<N_y>,<N_d>`",
        ));
    }
    if fields[1] != "1" {
        return Err(Error::parse(path, 1, format!("unsupported version `{}`", fields[1])));
    }
    let names = ["num_samples", "channels", "length", "N_y", "N_d"];
    let mut dims = [0usize; 5];
    for (k, name) in names.iter().enumerate() {
        dims[k] = fields[k + 2].trim().parse().map_err(|_| {
            Error::parse(path, 1, format!("header field `{name}` is not a count: `{}`", fields[k + 2]))
        })?;
    }
    let [num_samples, channels, length, num_classes, num_domains] = dims;
    if channels == 0 || length == 0 || num_classes == 0 || num_domains == 0 {
        return Err(Error::parse(path, 1, "header counts must be at least 1"));
    }
    let width = channels * length;
    let expected = width + 2;

    let mut values = Vec::with_capacity(num_samples * width);
    let mut class_labels = Vec::with_capacity(num_samples);
    let mut domain_labels = Vec::with_capacity(num_samples);
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<&str> = line.split(',').collect();
        if row.len() != expected {
            let hint = if row.len() < 2 || row.len() + 1 == expected {
                "; `domain` column missing?"
            } else {
                ""
            };
            return Err(Error::parse(
                path,
                line_no,
                format!(
                    "row has {} fields, expected {expected} (class, domain, {width} values){hint}",
                    row.len()
                ),
            ));
        }
        let class: usize = row[0].trim().parse().map_err(|_| {
            Error::parse(path, line_no, format!("column `class` is not a label: `{}`", row[0]))
        })?;
        let domain: usize = row[1].trim().parse().map_err(|_| {
            Error::parse(path, line_no, format!("column `domain` is not a label: `{}`", row[1]))
        })?;
        if class >= num_classes {
            return Err(Error::parse(
                path,
                line_no,
                format!("class label {class} out of range [0, {num_classes})"),
            ));
        }
        if domain >= num_domains {
            return Err(Error::parse(
                path,
                line_no,
                format!("domain label {domain} out of range [0, {num_domains})"),
            ));
        }
        for (k, field) in row[2..].iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::parse(path, line_no, format!("value column v_{k} is not a number: `{field}`"))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(path, line_no, format!("value column v_{k} is not finite")));
            }
            values.push(v);
        }
        class_labels.push(class);
        domain_labels.push(domain);
    }
    if class_labels.len() != num_samples {
        return Err(Error::parse(
            path,
            1,
            format!(
                "header declares {num_samples} samples but file has {}",
                class_labels.len()
            ),
        ));
    }
    TimeSeriesDataset::new(
        channels,
        length,
        num_classes,
        num_domains,
        values,
        class_labels,
        domain_labels,
    )
}
