//! Accuracy and conservation metrics plus report emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ecf::ConservationMask;
use crate::error::{EcfError, Result};
use crate::grid::GridField;
use crate::io::write_atomic;
use crate::solvers::ProblemKind;

/// Root mean square error, computed per channel and averaged over channels.
pub fn rmse(pred: &GridField, truth: &GridField) -> Result<f64> {
    pred.same_shape(truth)?;
    let channels = pred.channels();
    let total: f64 = (0..channels)
        .map(|c| {
            let (p, t) = (pred.channel(c), truth.channel(c));
            let mse = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
            mse.sqrt()
        })
        .sum();
    Ok(total / channels as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConservationSeries {
    /// Mean over the usable masked channels, one entry per frame.
    pub values: Vec<f64>,
    /// Masked channels whose reference integral is exactly zero somewhere;
    /// they are left out of the average.
    pub skipped_channels: Vec<usize>,
}

/// `|int pred - int truth| / |int truth|` per frame, averaged over the masked
/// channels. Channels with a zero reference integral are skipped and reported.
pub fn relative_conservation_error(
    pred: &[GridField],
    truth: &[GridField],
    mask: &ConservationMask,
) -> Result<ConservationSeries> {
    if pred.len() != truth.len() {
        return Err(EcfError::ShapeMismatch(format!(
            "{} predicted frames vs {} reference frames",
            pred.len(),
            truth.len()
        )));
    }
    let mut skipped = Vec::new();
    if let Some(first) = truth.first() {
        mask.check_channels(first.channels())?;
        for c in mask.masked() {
            if truth.iter().any(|t| t.integral(c) == 0.0) {
                skipped.push(c);
            }
        }
    }
    let used: Vec<usize> = mask.masked().filter(|c| !skipped.contains(c)).collect();
    let mut values = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(truth) {
        p.same_shape(t)?;
        if used.is_empty() {
            values.push(0.0);
            continue;
        }
        let sum: f64 = used
            .iter()
            .map(|&c| {
                let reference = t.integral(c);
                (p.integral(c) - reference).abs() / reference.abs()
            })
            .sum();
        values.push(sum / used.len() as f64);
    }
    Ok(ConservationSeries {
        values,
        skipped_channels: skipped,
    })
}

/// Evaluation variant: baseline, baseline plus integrated correction, or
/// baseline plus staged correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "base")]
    Base,
    #[serde(rename = "ecf_i")]
    EcfI,
    #[serde(rename = "ecf_s")]
    EcfS,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Base, Variant::EcfI, Variant::EcfS];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::EcfI => "ecf_i",
            Variant::EcfS => "ecf_s",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Base => "Base",
            Variant::EcfI => "+ECF_I",
            Variant::EcfS => "+ECF_S",
        }
    }
}

impl FromStr for Variant {
    type Err = EcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" | "baseline" => Ok(Variant::Base),
            "ecf_i" => Ok(Variant::EcfI),
            "ecf_s" => Ok(Variant::EcfS),
            _ => Err(EcfError::Config(format!("unknown variant '{s}' (base, ecf_i, ecf_s)"))),
        }
    }
}

/// Test-set results of one trained model under one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub dataset: ProblemKind,
    pub variant: Variant,
    pub seed: u64,
    /// `desk`, `paper` or `custom`.
    pub scale: String,
    pub resolution: usize,
    pub test_samples: usize,
    /// Per-step RMSE averaged over the test trajectories.
    pub rmse: Vec<f64>,
    /// Per-step relative conservation error averaged over the test trajectories.
    pub conservation_error: Vec<f64>,
    pub mean_rmse: f64,
    pub final_rmse: f64,
    pub mean_conservation_error: f64,
    /// Largest relative conservation error over every trajectory and step.
    pub max_conservation_error: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_channels: Vec<usize>,
}

impl MetricsRecord {
    fn key(&self) -> (ProblemKind, Variant, u64) {
        (self.dataset, self.variant, self.seed)
    }

    pub fn file_name(&self) -> String {
        format!("{}_{}_seed{}.json", self.dataset.name(), self.variant.name(), self.seed)
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Three significant digits, two-digit signed exponent: `1.40E-01`.
pub fn sci(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{x:.2E}");
    let (mantissa, exp) = s.split_once('E').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}E{sign}{:02}", exp.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    PlotData,
    All,
}

impl FromStr for ReportFormat {
    type Err = EcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "plotdata" | "plot" => Ok(ReportFormat::PlotData),
            "all" => Ok(ReportFormat::All),
            _ => Err(EcfError::Config(format!("unknown report format '{s}' (csv, markdown, plotdata, all)"))),
        }
    }
}

struct Group<'a> {
    records: Vec<&'a MetricsRecord>,
}

impl Group<'_> {
    fn stat(&self, f: impl Fn(&MetricsRecord) -> f64) -> (f64, f64) {
        mean_std(&self.records.iter().map(|r| f(r)).collect::<Vec<_>>())
    }

    fn series(&self, f: impl Fn(&MetricsRecord) -> &[f64]) -> Vec<f64> {
        let len = self.records.iter().map(|r| f(r).len()).min().unwrap_or(0);
        (0..len)
            .map(|t| mean_std(&self.records.iter().map(|r| f(r)[t]).collect::<Vec<_>>()).0)
            .collect()
    }
}

fn cell(stat: (f64, f64)) -> String {
    format!("{} ± {}", sci(stat.0), sci(stat.1))
}

/// Writes the requested report files into `out_dir` and returns their paths.
/// Output depends only on the set of records, never on their order.
pub fn emit_report(records: &[MetricsRecord], out_dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(EcfError::InvalidArgument("no metrics records to report".into()));
    }
    let mut sorted: Vec<&MetricsRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.key());
    for w in sorted.windows(2) {
        if w[0].key() == w[1].key() {
            return Err(EcfError::InvalidArgument(format!(
                "duplicate record for {} {} seed {}",
                w[0].dataset, w[0].variant.name(), w[0].seed
            )));
        }
    }
    let mut groups: BTreeMap<(ProblemKind, Variant), Group> = BTreeMap::new();
    for r in &sorted {
        groups
            .entry((r.dataset, r.variant))
            .or_insert_with(|| Group { records: Vec::new() })
            .records
            .push(r);
    }
    let mut scales: Vec<&str> = sorted.iter().map(|r| r.scale.as_str()).collect();
    scales.dedup();
    scales.sort_unstable();
    scales.dedup();
    let scale_note = if scales == ["paper"] {
        "Scale: paper protocol.".to_string()
    } else {
        format!("Scale: {} (not the paper-scale protocol).", scales.join(", "))
    };

    fs::create_dir_all(out_dir).map_err(|e| EcfError::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let path = out_dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| EcfError::io(parent, e))?;
        }
        write_atomic(&path, body.as_bytes())?;
        written.push(path);
        Ok(())
    };

    let csv = matches!(format, ReportFormat::Csv | ReportFormat::All);
    let md = matches!(format, ReportFormat::Markdown | ReportFormat::All);
    let plot = matches!(format, ReportFormat::PlotData | ReportFormat::All);

    if csv {
        let mut s = String::from(
            "dataset,variant,seed,scale,mean_rmse,final_rmse,mean_conservation_error,max_conservation_error\n",
        );
        for r in &sorted {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.dataset.name(),
                r.variant.name(),
                r.seed,
                r.scale,
                sci(r.mean_rmse),
                sci(r.final_rmse),
                sci(r.mean_conservation_error),
                sci(r.max_conservation_error)
            );
        }
        put("records.csv", s)?;

        let mut s = String::from(
            "dataset,variant,seeds,rmse_mean,rmse_std,final_rmse_mean,final_rmse_std,conservation_mean,conservation_std\n",
        );
        for ((d, v), g) in &groups {
            let (a, b, c) = (
                g.stat(|r| r.mean_rmse),
                g.stat(|r| r.final_rmse),
                g.stat(|r| r.mean_conservation_error),
            );
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                d.name(),
                v.name(),
                g.records.len(),
                sci(a.0),
                sci(a.1),
                sci(b.0),
                sci(b.1),
                sci(c.0),
                sci(c.1)
            );
        }
        put("summary.csv", s)?;
    }

    if md {
        let datasets: Vec<ProblemKind> = {
            let mut d: Vec<_> = groups.keys().map(|k| k.0).collect();
            d.dedup();
            d
        };
        let mut variants: Vec<Variant> = groups.keys().map(|k| k.1).collect();
        variants.sort_unstable();
        variants.dedup();
        let table = |title: &str, f: &dyn Fn(&MetricsRecord) -> f64| {
            let mut s = format!("## {title}\n\n{scale_note} Mean ± population std over seeds.\n\n| Variant |");
            for d in &datasets {
                let _ = write!(s, " {} |", d.label());
            }
            s.push_str("\n|---|");
            s.push_str(&"---|".repeat(datasets.len()));
            s.push('\n');
            for v in &variants {
                let _ = write!(s, "| {} |", v.label());
                for d in &datasets {
                    match groups.get(&(*d, *v)) {
                        Some(g) => {
                            let _ = write!(s, " {} |", cell(g.stat(f)));
                        }
                        None => s.push_str(" n/a |"),
                    }
                }
                s.push('\n');
            }
            s
        };
        let mut s = String::from("# Results\n\n");
        s.push_str(&table("Mean rollout RMSE", &|r| r.mean_rmse));
        s.push('\n');
        s.push_str(&table("Final-step RMSE", &|r| r.final_rmse));
        s.push('\n');
        s.push_str(&table("Mean relative conservation error", &|r| r.mean_conservation_error));
        put("report.md", s)?;
    }

    if plot {
        for ((d, v), g) in &groups {
            let cons = g.series(|r| &r.conservation_error);
            let err = g.series(|r| &r.rmse);
            let mut s = String::from("# step\tconservation_error\trmse\n");
            for (t, (c, e)) in cons.iter().zip(&err).enumerate() {
                let _ = writeln!(s, "{}\t{}\t{}", t + 1, sci(*c), sci(*e));
            }
            put(&format!("plotdata/{}_{}.tsv", d.name(), v.name()), s)?;
        }
    }
    Ok(written)
}

/// Loads every `*.json` metrics record in `dir`.
pub fn load_records(dir: &Path) -> Result<Vec<MetricsRecord>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| EcfError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && !crate::pipeline::is_manifest(p))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| EcfError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| EcfError::Format(format!("{}: {e}", p.display())))
        })
        .collect()
}

pub fn write_record(record: &MetricsRecord, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| EcfError::io(dir, e))?;
    let path = dir.join(record.file_name());
    let json = serde_json::to_string_pretty(record).expect("record serializes");
    write_atomic(&path, json.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Boundary, GridSpec};

    fn field(values: Vec<f64>, channels: usize) -> GridField {
        let grid = GridSpec::line(values.len() / channels, 1.0, Boundary::Periodic).unwrap();
        GridField::new(grid, channels, values).unwrap()
    }

    #[test]
    fn rmse_averages_channels() {
        let p = field(vec![1.0, 1.0, 0.0, 0.0], 2);
        let t = field(vec![0.0; 4], 2);
        assert!((rmse(&p, &t).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_reference_channel_is_skipped() {
        let p = vec![field(vec![1.0, 1.0, 3.0, 3.0], 2)];
        let t = vec![field(vec![1.0, -1.0, 2.0, 2.0], 2)];
        let s = relative_conservation_error(&p, &t, &ConservationMask::all(2)).unwrap();
        assert_eq!(s.skipped_channels, vec![0]);
        assert!((s.values[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn scientific_format() {
        assert_eq!(sci(0.14), "1.40E-01");
        assert_eq!(sci(12345.0), "1.23E+04");
        assert_eq!(sci(0.0), "0.00E+00");
        assert_eq!(sci(-2.5e-7), "-2.50E-07");
        assert_eq!(sci(1e100), "1.00E+100");
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
