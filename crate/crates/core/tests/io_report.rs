mod common;

use std::fs;

use ecf_core::dataset::generate_split;
use ecf_core::io::{decode_dataset, encode_dataset, read_dataset, write_dataset};
use ecf_core::metrics::{emit_report, mean_std, sci, write_record, ReportFormat};
use ecf_core::{DatasetConfig, EcfError, MetricsRecord, Precision, ProblemKind, Split, TrajectoryDataset, Variant};
use proptest::prelude::*;
use tempfile::TempDir;

fn small(problem: ProblemKind) -> TrajectoryDataset {
    let mut c = DatasetConfig::desk(problem);
    c.resolution = 8;
    c.counts.test = 2;
    c.params.n_steps = 40;
    c.params.n_snapshots = 4;
    generate_split(&c, Split::Test).unwrap()
}

#[test]
fn f32_storage_rounds_to_nearest() {
    let tmp = TempDir::new().unwrap();
    let ds = small(ProblemKind::Water);
    let path = tmp.path().join("w.ecfd");
    write_dataset(&ds, &path, Precision::F32).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back.precision, Precision::F32);
    for (a, b) in ds.samples().iter().zip(back.samples()) {
        assert_eq!(a.seed, b.seed);
        for (x, y) in a.frames.iter().zip(&b.frames) {
            assert_eq!(*y, *x as f32 as f64);
        }
    }
    assert_eq!(back.meta, ds.meta);
    assert_eq!((back.grid, back.mask.clone(), back.snapshots), (ds.grid, ds.mask.clone(), ds.snapshots));
}

#[test]
fn f64_round_trip_is_exact() {
    let ds = small(ProblemKind::Cd);
    let back = decode_dataset(&encode_dataset(&ds, Precision::F64), ds.meta.clone()).unwrap();
    assert_eq!(back.samples(), ds.samples());
}

#[test]
fn crafted_corruptions_are_rejected() {
    let ds = small(ProblemKind::Diff);
    let bytes = encode_dataset(&ds, Precision::F64);
    let decode = |b: &[u8]| decode_dataset(b, ds.meta.clone());
    let format_err = |r: Result<TrajectoryDataset, EcfError>, needle: &str| match r {
        Err(EcfError::Format(m)) => assert!(m.contains(needle), "{m}"),
        other => panic!("expected a format error mentioning '{needle}', got {other:?}"),
    };

    // Big-endian payload fixture: byte-order marker and every multi-byte header field swapped.
    let mut be = bytes.clone();
    be[6..8].copy_from_slice(&0xFEFFu16.to_be_bytes());
    format_err(decode(&be), "big-endian");

    let mut bad = bytes.clone();
    bad[0] = b'X';
    format_err(decode(&bad), "magic");
    let mut bad = bytes.clone();
    *bad.last_mut().unwrap() ^= 1;
    format_err(decode(&bad), "checksum");
    format_err(decode(&bytes[..bytes.len() - 8]), "size");
    let mut bad = bytes.clone();
    bad[4] = 9;
    format_err(decode(&bad), "version");
}

fn record(dataset: ProblemKind, variant: Variant, seed: u64, rmse: f64) -> MetricsRecord {
    let series = vec![rmse * 0.5, rmse, rmse * 1.5];
    MetricsRecord {
        dataset,
        variant,
        seed,
        scale: "desk".into(),
        resolution: 32,
        test_samples: 10,
        mean_rmse: rmse,
        final_rmse: rmse * 1.5,
        mean_conservation_error: rmse * 1e-3,
        max_conservation_error: rmse * 2e-3,
        conservation_error: series.iter().map(|v| v * 1e-3).collect(),
        rmse: series,
        skipped_channels: Vec::new(),
    }
}

#[test]
fn five_seed_cell_is_mean_and_population_std() {
    let tmp = TempDir::new().unwrap();
    let values = [0.10, 0.12, 0.14, 0.11, 0.13];
    let records: Vec<_> = values
        .iter()
        .enumerate()
        .map(|(s, &v)| record(ProblemKind::AcDw, Variant::Base, s as u64, v))
        .collect();
    emit_report(&records, tmp.path(), ReportFormat::All).unwrap();
    // mean 0.12, population variance (4+0+4+1+1)e-4/5 = 2e-4
    let expected = format!("{} ± {}", sci(0.12), sci(2e-4f64.sqrt()));
    assert_eq!(expected, "1.20E-01 ± 1.41E-02");
    let md = fs::read_to_string(tmp.path().join("report.md")).unwrap();
    assert!(md.contains(&format!("| Base | {expected} |")), "{md}");
    let (m, s) = mean_std(&values);
    assert!((m - 0.12).abs() < 1e-15 && (s - 2e-4f64.sqrt()).abs() < 1e-15);
}

fn parse_cells(line: &str) -> Vec<String> {
    line.trim().trim_matches('|').split('|').map(|c| c.trim().to_string()).collect()
}

#[test]
fn markdown_and_csv_agree() {
    let tmp = TempDir::new().unwrap();
    let mut records = Vec::new();
    for (d, base) in [(ProblemKind::AcDw, 0.14), (ProblemKind::Water, 0.02)] {
        for (v, f) in [(Variant::Base, 1.0), (Variant::EcfI, 0.9), (Variant::EcfS, 0.95)] {
            for s in 0..3 {
                records.push(record(d, v, s, base * f * (1.0 + 0.05 * s as f64)));
            }
        }
    }
    emit_report(&records, tmp.path(), ReportFormat::All).unwrap();
    let md = fs::read_to_string(tmp.path().join("report.md")).unwrap();
    let csv = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 6);

    // First markdown table: mean rollout RMSE, one column per dataset.
    let table: Vec<&str> = md.lines().skip_while(|l| !l.starts_with("| Variant")).take_while(|l| l.starts_with('|')).collect();
    let header = parse_cells(table[0]);
    assert_eq!(header, ["Variant", "AC-DW", "Water"]);
    let mut checked = 0;
    for line in &table[2..] {
        let cells = parse_cells(line);
        let variant: Variant = ["base", "ecf_i", "ecf_s"]
            .into_iter()
            .map(|n| n.parse::<Variant>().unwrap())
            .find(|v| v.label() == cells[0])
            .unwrap();
        for (col, dataset) in ["ac_dw", "water"].iter().enumerate() {
            let row = rows.iter().find(|r| r[0] == *dataset && r[1] == variant.name()).unwrap();
            let (mean, std) = cells[col + 1].split_once(" ± ").unwrap();
            assert_eq!(mean.parse::<f64>().unwrap(), row[3].parse::<f64>().unwrap());
            assert_eq!(std.parse::<f64>().unwrap(), row[4].parse::<f64>().unwrap());
            checked += 1;
        }
    }
    assert_eq!(checked, 6);
}

#[test]
fn duplicates_and_empty_input_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let r = record(ProblemKind::Heat, Variant::EcfS, 0, 0.1);
    assert!(emit_report(&[r.clone(), r.clone()], tmp.path(), ReportFormat::Csv).is_err());
    assert!(emit_report(&[], tmp.path(), ReportFormat::Csv).is_err());
    let path = write_record(&r, tmp.path()).unwrap();
    assert!(path.ends_with("heat_ecf_s_seed0.json"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sci_parses_back_to_three_digits(x in 1e-300f64..1e300) {
        let s = sci(x);
        let y: f64 = s.parse().unwrap();
        prop_assert!((y - x).abs() <= 5e-3 * x);
        let (_, exp) = s.split_once('E').unwrap();
        prop_assert!(exp.starts_with('+') || exp.starts_with('-'));
    }

    #[test]
    fn report_ignores_record_order(perm in Just(()).prop_perturb(|_, mut rng| {
        let mut idx: Vec<usize> = (0..6).collect();
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        idx
    })) {
        let records: Vec<_> = (0..6).map(|s| record(ProblemKind::Diff, Variant::ALL[s % 3], s as u64, 0.1 + s as f64 * 0.01)).collect();
        let shuffled: Vec<_> = perm.iter().map(|&i| records[i].clone()).collect();
        let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
        emit_report(&records, a.path(), ReportFormat::All).unwrap();
        emit_report(&shuffled, b.path(), ReportFormat::All).unwrap();
        for name in ["records.csv", "summary.csv", "report.md"] {
            prop_assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
    }
}
