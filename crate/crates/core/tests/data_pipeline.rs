use std::io::Write;

use chlorocast::data::*;
use chlorocast::Error;
use chrono::{Duration, NaiveDate, NaiveDateTime};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn stamps(n: usize) -> Vec<NaiveDateTime> {
    let t0 = NaiveDate::from_ymd_opt(2021, 6, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    (0..n).map(|i| t0 + Duration::minutes(30 * i as i64)).collect()
}

fn frame(cols: Vec<(&str, Vec<f64>)>) -> TimeSeriesFrame {
    let n = cols[0].1.len();
    let cols = cols.into_iter().map(|(n, v)| Column::new(n, v)).collect();
    TimeSeriesFrame::new("time", stamps(n), cols).unwrap()
}

fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(contents.as_bytes()).unwrap();
    f
}

/// Computational form `(nΣxy − ΣxΣy) / √((nΣx² − (Σx)²)(nΣy² − (Σy)²))`.
fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        sx += x[i];
        sy += y[i];
        sxy += x[i] * y[i];
        sxx += x[i] * x[i];
        syy += y[i] * y[i];
    }
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

#[test]
fn load_well_formed_csv() {
    let f = write_tmp(
        "time,Chl,Temp\n2021-01-01T00:00:00,1.5,20\n2021-01-01T00:30:00,1.7,20.5\n2021-01-01T01:00:00,1.6,21\n",
    );
    let fr = load_csv(f.path(), Some(&["Chl".to_string(), "Temp".to_string()])).unwrap();
    assert_eq!(fr.len(), 3);
    assert!(fr.is_clean());
    assert_eq!(fr.column("Temp").unwrap().values, vec![20.0, 20.5, 21.0]);
}

#[test]
fn empty_cell_is_flagged_missing() {
    let f = write_tmp("time,a,b\n2021-01-01 00:00,1,2\n2021-01-01 00:30,,3\n2021-01-01 01:00,oops,4\n");
    let fr = load_csv(f.path(), None).unwrap();
    let a = fr.column("a").unwrap();
    assert_eq!(a.flags, vec![CellFlag::Valid, CellFlag::Missing, CellFlag::Missing]);
    assert!(a.values[1].is_nan());
}

#[test]
fn load_errors_are_distinct() {
    let missing = load_csv(std::path::Path::new("/nonexistent/file.csv"), None).unwrap_err();
    assert!(matches!(missing, Error::MissingFile(_)));

    let f = write_tmp("time\n2021-01-01T00:00:00\n");
    assert!(matches!(load_csv(f.path(), None).unwrap_err(), Error::MalformedHeader(_)));

    let f = write_tmp("time,a,b\n2021-01-01T00:00:00,1,2\n");
    let err = load_csv(f.path(), Some(&["a".to_string(), "c".to_string()])).unwrap_err();
    assert!(matches!(err, Error::MalformedHeader(_)));

    let f = write_tmp("time,a\n2021-01-01T00:00:00,1\n2021-01-01T00:30:00,2\n2021-01-01T00:30:00,3\n");
    match load_csv(f.path(), None).unwrap_err() {
        Error::NonMonotoneTimestamp { row, .. } => assert_eq!(row, 4),
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn csv_roundtrip_preserves_values_bitwise() {
    let fr = frame(vec![
        ("a", vec![0.1, 1.0 / 3.0, f64::NAN, 7e-12]),
        ("b", vec![-2.5, 1e10, 3.0, 0.2 + 0.1]),
    ]);
    let out = tempfile::NamedTempFile::new().unwrap();
    write_csv(&fr, out.path(), false).unwrap();
    let back = load_csv(out.path(), None).unwrap();
    assert_eq!(back.timestamps(), fr.timestamps());
    for (x, y) in back.columns().iter().zip(fr.columns()) {
        assert_eq!(x.flags, y.flags);
        for (a, b) in x.values.iter().zip(&y.values) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }

    write_csv(&fr, out.path(), true).unwrap();
    let text = std::fs::read_to_string(out.path()).unwrap();
    assert!(text.starts_with("time,a,a_flag,b,b_flag\n"));
    assert!(text.contains(",missing,"));
}

#[test]
fn pearson_examples() {
    let x = [1.0, 2.0, 3.0, 4.5];
    assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);

    let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
    let want = pearson_oracle(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]);
    assert!((r - want).abs() < 1e-14, "{r} vs {want}");
    // 3 / sqrt(2 · 14/3) by hand
    assert!((r - 3.0 / (28.0f64 / 3.0).sqrt()).abs() < 1e-14);

    assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation(_))));
    assert!(pearson(&[1.0], &[1.0]).is_err());
    assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
}

#[test]
fn feature_selection_keeps_target_drops_noise_and_duplicates() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 400;
    let target: Vec<f64> = (0..n).map(|i| (i as f64 * 0.05).sin() * 3.0 + rng.random::<f64>()).collect();
    let strong: Vec<f64> = target.iter().map(|v| 2.0 * v + rng.random::<f64>()).collect();
    let twin = strong.clone();
    let weak: Vec<f64> = target.iter().map(|v| 0.2 * v + rng.random::<f64>() * 1.5).collect();
    let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();

    let r_noise = pearson_oracle(&noise, &target);
    assert!(r_noise.abs() < 0.2, "noise correlation {r_noise} should be below threshold");
    let r_weak = pearson_oracle(&weak, &target);
    assert!(r_weak.abs() > 0.2 && r_weak.abs() < pearson_oracle(&strong, &target).abs());

    let fr = frame(vec![
        ("noise", noise),
        ("weak", weak),
        ("Chl", target),
        ("strong", strong),
        ("twin", twin),
    ]);
    let sel = select_features(&fr, "Chl", 0.2).unwrap();
    assert_eq!(sel[0], "Chl");
    assert!(!sel.contains(&"noise".to_string()));
    let twins = sel.iter().filter(|s| *s == "strong" || *s == "twin").count();
    assert_eq!(twins, 1);
    assert_eq!(sel.last().unwrap(), "weak");

    assert!(matches!(select_features(&fr, "nope", 0.2), Err(Error::UnknownColumn(_))));
    assert!(select_features(&fr, "Chl", 1.0).is_err());
}

#[test]
fn minmax_examples() {
    let fr = frame(vec![("a", vec![0.0, 5.0, 10.0]), ("c", vec![3.0, 3.0, 3.0])]);
    let (out, stats) = minmax_fit_transform(&fr, None).unwrap();
    assert_eq!(out.column("a").unwrap().values, vec![0.0, 0.5, 1.0]);
    assert_eq!(out.column("c").unwrap().values, vec![0.0, 0.0, 0.0]);

    let test = frame(vec![("a", vec![-5.0, 20.0, 5.0]), ("c", vec![3.0, 4.0, 2.0])]);
    let (out, reused) = minmax_fit_transform(&test, Some(&stats)).unwrap();
    assert_eq!(reused, stats);
    assert_eq!(out.column("a").unwrap().values, vec![-0.5, 2.0, 0.5]);

    let json = stats.to_json().unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["a"]["min"], 0.0);
    assert_eq!(v["a"]["max"], 10.0);
    assert_eq!(NormalizationStats::from_json(&json).unwrap(), stats);
}

#[test]
fn window_counts() {
    let fr = frame(vec![("y", (0..100).map(f64::from).collect())]);
    let ds = make_windows(&fr, "y", 12, 12).unwrap();
    assert_eq!(ds.len(), 77);
    assert_eq!(ds.input(0)[11], 11.0);
    assert_eq!(ds.target(0), (12..24).map(f64::from).collect::<Vec<_>>().as_slice());

    let fr = frame(vec![("y", (0..24).map(f64::from).collect())]);
    assert_eq!(make_windows(&fr, "y", 12, 12).unwrap().len(), 1);
    let fr = frame(vec![("y", (0..23).map(f64::from).collect())]);
    match make_windows(&fr, "y", 12, 12).unwrap_err() {
        Error::TooShort { required, actual } => assert_eq!((required, actual), (24, 23)),
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn chronological_split_examples() {
    let fr = frame(vec![("y", (0..15).map(f64::from).collect())]);
    let ds = make_windows(&fr, "y", 4, 2).unwrap();
    assert_eq!(ds.len(), 10);
    let s = chronological_split(&ds, DEFAULT_SPLIT).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
    let max_train = *s.train.starts().iter().max().unwrap();
    let min_val = *s.val.starts().iter().min().unwrap();
    let min_test = *s.test.starts().iter().min().unwrap();
    assert!(max_train < min_val && min_val < min_test);

    let bad = SplitFractions {
        train: 1.0,
        val: 0.0,
        test: 0.0,
    };
    assert!(matches!(chronological_split(&ds, bad), Err(Error::EmptySplit(_))));

    // 100 rows, 12+12 window: 77 windows, 53 train → rows 0..(53 + 23)
    assert_eq!(train_row_span(100, 12, 12, DEFAULT_SPLIT).unwrap(), 76);
}

#[test]
fn spikes_are_flagged_and_replaced() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut v: Vec<f64> = (0..600).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    v[100] = 40.0;
    v[350] = -25.0;
    let flagged = flag_outliers_pauta(&frame(vec![("a", v)])).unwrap();
    assert_eq!(flagged.columns()[0].flags[100], CellFlag::Outlier);
    assert_eq!(flagged.columns()[0].flags[350], CellFlag::Outlier);
    let clean = interpolate_linear(&flagged).unwrap();
    assert!(clean.columns()[0].values[100].abs() < 4.0);
}

#[test]
fn pauta_then_interpolation_is_stable_on_gaussian_data() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..600).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let clean = interpolate_linear(&flag_outliers_pauta(&frame(vec![("a", v)])).unwrap()).unwrap();
        let again = flag_outliers_pauta(&clean).unwrap();
        let fresh = again.columns()[0]
            .flags
            .iter()
            .filter(|f| **f == CellFlag::Outlier)
            .count();
        assert_eq!(fresh, 0, "seed {seed}: second pass flagged {fresh} cells");
    }
}

proptest! {
    #[test]
    fn pearson_symmetric_and_affine_invariant(
        pts in prop::collection::vec((-100f64..100.0, -100f64..100.0), 3..40),
        a in 0.01f64..50.0,
        b in -100f64..100.0,
    ) {
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        if let (Ok(rxy), Ok(ryx)) = (pearson(&x, &y), pearson(&y, &x)) {
            prop_assert!((rxy - ryx).abs() < 1e-12);
            prop_assert!(rxy.abs() <= 1.0 + 1e-12);
            let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((pearson(&ax, &y).unwrap() - rxy).abs() < 1e-9);
        }
    }

    #[test]
    fn interpolation_leaves_valid_cells_untouched(
        cells in prop::collection::vec(prop::option::weighted(0.7, -1e3f64..1e3), 2..60)
    ) {
        prop_assume!(cells.iter().any(Option::is_some));
        let v: Vec<f64> = cells.iter().map(|c| c.unwrap_or(f64::NAN)).collect();
        let fr = frame(vec![("a", v.clone())]);
        let out = interpolate_linear(&fr).unwrap();
        prop_assert!(out.is_clean());
        for (i, c) in cells.iter().enumerate() {
            let got = out.columns()[0].values[i];
            match c {
                Some(x) => prop_assert_eq!(got.to_bits(), x.to_bits()),
                None => prop_assert!(got.is_finite()),
            }
        }
    }

    #[test]
    fn minmax_self_fit_maps_into_unit_interval(v in prop::collection::vec(-1e6f64..1e6, 2..50)) {
        let fr = frame(vec![("a", v.clone())]);
        let (out, _) = minmax_fit_transform(&fr, None).unwrap();
        let o = &out.columns()[0].values;
        prop_assert!(o.iter().all(|x| (0.0..=1.0).contains(x)));
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            let imin = v.iter().position(|x| *x == lo).unwrap();
            let imax = v.iter().position(|x| *x == hi).unwrap();
            prop_assert_eq!(o[imin], 0.0);
            prop_assert_eq!(o[imax], 1.0);
        }
    }

    #[test]
    fn windows_reconstruct_the_series(len in 5usize..60, input_len in 1usize..8, horizon in 1usize..6) {
        prop_assume!(len >= input_len + horizon);
        let a: Vec<f64> = (0..len).map(|i| i as f64 * 1.5).collect();
        let b: Vec<f64> = (0..len).map(|i| -(i as f64)).collect();
        let fr = frame(vec![("a", a), ("b", b)]);
        let ds = make_windows(&fr, "b", input_len, horizon).unwrap();
        prop_assert_eq!(ds.len(), len - input_len - horizon + 1);
        let mut last_rows = Vec::new();
        for i in 0..ds.len() {
            let w = ds.input(i);
            last_rows.extend_from_slice(&w[(input_len - 1) * 2..input_len * 2]);
            // targets follow the inputs with no gap
            prop_assert_eq!(ds.target(i)[0], -((i + input_len) as f64));
        }
        let mut expect = Vec::new();
        for r in input_len - 1..len - horizon {
            expect.push(fr.columns()[0].values[r]);
            expect.push(fr.columns()[1].values[r]);
        }
        prop_assert_eq!(last_rows, expect);
    }
}
