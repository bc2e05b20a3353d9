use chlorocast::data::{pearson, train_row_span, Column, NormalizationStats, TimeSeriesFrame};
use chlorocast::pipeline::{build_splits, preprocess, PipelineOptions};
use chlorocast::synthetic::generate_synthetic;

fn with_defects(frame: &TimeSeriesFrame) -> TimeSeriesFrame {
    let cols = frame
        .columns()
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let mut v = c.values.clone();
            v[100 + j] = f64::NAN;
            v[500 + 7 * j] += 400.0;
            Column::new(c.name.clone(), v)
        })
        .collect();
    TimeSeriesFrame::new(frame.time_column(), frame.timestamps().to_vec(), cols).unwrap()
}

#[test]
fn preprocess_cleans_selects_and_fits_on_training_rows() {
    let raw = with_defects(&generate_synthetic(3000, 6, 4, 0.6).unwrap());
    let opts = PipelineOptions::default();
    let pre = preprocess(&raw, &opts, 72, 24).unwrap();
    let frame = &pre.frame;

    assert_eq!(frame.len(), 1500);
    assert!(frame.is_clean());
    assert_eq!(pre.features()[0], "Chl");
    assert!(frame.columns().iter().all(|c| c.values.iter().all(|v| v.is_finite())));
    // the injected spikes are gone
    let spike_free = frame.columns().iter().all(|c| c.values.iter().all(|v| v.abs() < 100.0));
    assert!(spike_free);

    let span = train_row_span(frame.len(), 72, 24, opts.split).unwrap();
    let train_rows = frame.slice_rows(0..span).unwrap();
    assert_eq!(pre.stats, NormalizationStats::fit(&train_rows).unwrap());
    let target = &train_rows.column("Chl").unwrap().values;
    for c in &train_rows.columns()[1..] {
        assert!(pearson(target, &c.values).unwrap().abs() >= opts.correlation_threshold, "{}", c.name);
    }

    let again = preprocess(&raw, &opts, 72, 24).unwrap();
    assert_eq!(again, pre);
}

#[test]
fn splits_are_normalised_with_training_statistics() {
    let raw = generate_synthetic(2000, 4, 1, 0.5).unwrap();
    let opts = PipelineOptions::default();
    let pre = preprocess(&raw, &opts, 72, 24).unwrap();
    let splits = build_splits(&pre.frame, &pre.stats, "Chl", 72, 24, opts.split).unwrap();
    let n = pre.features().len();
    assert_eq!(splits.train.n_features, n);
    // the training inputs stay within the fitted range
    assert!(splits.train.inputs().iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
    let total = splits.train.len() + splits.val.len() + splits.test.len();
    assert_eq!(total, pre.frame.len() - 72 - 24 + 1);
    assert!(splits.train.start(splits.train.len() - 1) < splits.val.start(0));
    assert!(splits.val.start(splits.val.len() - 1) < splits.test.start(0));
}

#[test]
fn unknown_target_is_an_error() {
    let raw = generate_synthetic(1000, 3, 0, 0.5).unwrap();
    let opts = PipelineOptions {
        target: "Turbidity".into(),
        ..PipelineOptions::default()
    };
    assert!(preprocess(&raw, &opts, 72, 24).is_err());
}
