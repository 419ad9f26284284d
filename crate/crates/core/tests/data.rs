use gcgnet::data::{
    fit_apply_scaler, load_csv, make_windows, split, synth_generate, window_count, Dataset, MaskKind, MaskSpec,
    ScalerStats, SynthSpec,
};
use gcgnet::Error;

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
    let path = dir.path().join("data.csv");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn loads_named_columns_and_keeps_timestamps() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "t,load,price\n2024-01-01,10,1.5\n2024-01-02,11,2.5\n2024-01-03,12,3.5\n");
    let ds = load_csv(&path, &names(&["price"]), &names(&["load"])).unwrap();
    assert_eq!((ds.n_endo(), ds.n_exo(), ds.len()), (1, 1, 3));
    assert_eq!(ds.endo, vec![vec![1.5, 2.5, 3.5]]);
    assert_eq!(ds.exo, vec![vec![10.0, 11.0, 12.0]]);
    assert_eq!(ds.timestamps.as_deref().unwrap()[2], "2024-01-03");
}

#[test]
fn load_errors_name_column_and_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "t,load,price\n0,1,2\n1,3,NaN\n");
    match load_csv(&path, &names(&["cost"]), &names(&["load"])) {
        Err(Error::MissingColumn(c)) => assert_eq!(c, "cost"),
        other => panic!("{other:?}"),
    }
    match load_csv(&path, &names(&["price"]), &names(&["load"])) {
        Err(Error::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "price")),
        other => panic!("{other:?}"),
    }
    let empty = write(&dir, "t,load,price\n");
    assert!(matches!(
        load_csv(&empty, &names(&["price"]), &names(&["load"])),
        Err(Error::EmptyDataset)
    ));
    assert!(matches!(
        load_csv(dir.path().join("nope.csv"), &names(&["price"]), &[]),
        Err(Error::Io { .. })
    ));
}

#[test]
fn written_csv_reads_back_identically() {
    let ds = synth_generate(&SynthSpec { length: 50, ..SynthSpec::default() }, 3).unwrap().dataset;
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, std::str::from_utf8(&buf).unwrap());
    let back = load_csv(&path, &ds.endo_names, &ds.exo_names).unwrap();
    assert_eq!(back.endo, ds.endo);
    assert_eq!(back.exo, ds.exo);
}

#[test]
fn split_sizes_and_concatenation() {
    let series: Vec<f64> = (0..100).map(f64::from).collect();
    let ds = Dataset::new(names(&["y"]), vec![series.clone()], names(&["x"]), vec![series.clone()]).unwrap();
    let (tr, va, te) = split(&ds, [0.7, 0.1, 0.2]).unwrap();
    assert_eq!((tr.len(), va.len(), te.len()), (70, 10, 20));
    let joined: Vec<f64> = [&tr, &va, &te].iter().flat_map(|d| d.endo[0].clone()).collect();
    assert_eq!(joined, series);
    assert!(matches!(split(&ds, [1.0, 0.0, 0.0]), Err(Error::Split(_))));
    assert!(matches!(split(&ds, [0.5, 0.1, 0.1]), Err(Error::Split(_))));
}

#[test]
fn window_counts_follow_the_closed_form() {
    let ds_of = |len: usize| Dataset::new(names(&["y"]), vec![vec![0.0; len]], vec![], vec![]).unwrap();
    assert_eq!(make_windows(&ds_of(192), 168, 24, 1).unwrap().len(), 1);
    let w = make_windows(&ds_of(200), 168, 24, 1).unwrap();
    assert_eq!(w.len(), 9);
    assert_eq!(w.last().unwrap().origin_index, 8);
    assert!(matches!(
        make_windows(&ds_of(191), 168, 24, 1),
        Err(Error::SeriesTooShort { length: 191, needed: 192 })
    ));
    assert_eq!(make_windows(&ds_of(200), 168, 24, 3).unwrap().len(), window_count(200, 168, 24, 3));
}

#[test]
fn scaler_uses_population_statistics_of_train() {
    let train = Dataset::new(names(&["y"]), vec![vec![1.0, 3.0]], names(&["x"]), vec![vec![5.0, 5.0]]).unwrap();
    let val = Dataset::new(names(&["y"]), vec![vec![4.0]], names(&["x"]), vec![vec![6.0]]).unwrap();
    let (tr, others, stats) = fit_apply_scaler(&train, &[&val]).unwrap();
    assert_eq!(stats.endo_mean, vec![2.0]);
    assert_eq!(stats.endo_std, vec![1.0]);
    assert_eq!(tr.endo, vec![vec![-1.0, 1.0]]);
    assert_eq!(tr.exo, vec![vec![0.0, 0.0]]);
    assert_eq!(others[0].endo, vec![vec![2.0]]);
    assert_eq!(ScalerStats::fit(&train).unwrap(), stats);
}

#[test]
fn synthetic_generation_is_reproducible_and_exact() {
    let spec = SynthSpec::default();
    let a = synth_generate(&spec, 9).unwrap();
    assert_eq!(a, synth_generate(&spec, 9).unwrap());
    assert_ne!(a.dataset, synth_generate(&spec, 10).unwrap().dataset);
    assert_eq!(a.dataset.len(), 2000);
    assert_eq!(a.dataset.n_exo(), 2);

    let ident = synth_generate(
        &SynthSpec {
            length: 300,
            coupling: vec![1.0],
            noise_std: 0.0,
            season_amplitude: 0.0,
            ..SynthSpec::default()
        },
        4,
    )
    .unwrap();
    assert_eq!(ident.dataset.endo[0], ident.dataset.exo[0]);
    assert_eq!(ident.optimal_mse, 0.0);
    assert!(synth_generate(&SynthSpec { length: 0, ..SynthSpec::default() }, 0).is_err());
}

#[test]
fn mask_specs_parse_and_validate() {
    let m: MaskSpec = "zeros:0.3:7".parse().unwrap();
    assert_eq!((m.kind, m.ratio, m.seed), (MaskKind::Zeros, 0.3, 7));
    assert_eq!(m.to_string().parse::<MaskSpec>().unwrap(), m);
    assert_eq!("random:0.1:2".parse::<MaskSpec>().unwrap().kind, MaskKind::RandomNormal);
    for bad in ["zeros:1.0:1", "zeros:-0.1:1", "ones:0.1:1", "zeros:0.1", "zeros:x:1"] {
        assert!(matches!(bad.parse::<MaskSpec>(), Err(Error::Config(_))), "{bad}");
    }
}
