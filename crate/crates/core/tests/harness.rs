mod common;

use std::fs;

use survmed::csv_io::{read_csv, write_csv, ColumnMapping};
use survmed::harness::{
    replicate_values, run_analysis, run_configs, run_family, run_replications,
    simulation_quantities, summarize, write_analysis_outputs, write_family_outputs,
    AnalysisOptions, RunOptions, QUANTITY_GROUPS, RANDOM_CONTROL_NAME, SUMMARY_HEADER,
};
use survmed::mediation::MediationOptions;
use survmed::sim::{make_scenarios, Family, PreparedScenario, ScenarioConfig};

fn small_run(q: usize, threads: Option<usize>) -> RunOptions {
    RunOptions {
        replications: Some(q),
        n: Some(300),
        seed: Some(7),
        threads,
        mediation: MediationOptions::default(),
    }
}

fn cohort_mapping() -> ColumnMapping {
    ColumnMapping {
        time: "age_exit".into(),
        event: "chd".into(),
        entry: Some("age_entry".into()),
        exposures: vec!["gender".into(), "smoking".into(), "drinking".into()],
        mediators: ["bmi", "sbp", "dbp", "hdl", "ldl", "tc"]
            .map(String::from)
            .to_vec(),
    }
}

#[test]
fn single_replicate_summary_equals_pipeline() {
    let cfg = ScenarioConfig::uniform(400, 2, 1.0, 0.5, 1.0, 0.5);
    let s = run_replications(&cfg, 1, 3, Some(1), &MediationOptions::default()).unwrap();
    let ds = PreparedScenario::new(cfg).unwrap().replicate(3, 0);
    let direct = replicate_values(&ds, &MediationOptions::default()).unwrap();
    assert_eq!(s.n_replicates, 1);
    for (st, v) in s.stats.iter().zip(&direct) {
        assert_eq!(st.mean, *v);
        assert_eq!(st.mc_sd, 0.0);
    }
}

#[test]
fn summary_independent_of_thread_count() {
    let cfg = make_scenarios(Family::M3)[2].clone();
    let one = run_configs(std::slice::from_ref(&cfg), &small_run(16, Some(1))).unwrap();
    let eight = run_configs(&[cfg], &small_run(16, Some(8))).unwrap();
    assert_eq!(one, eight);
}

#[test]
fn summary_independent_of_replicate_order() {
    let names = simulation_quantities();
    let prepared =
        PreparedScenario::new(ScenarioConfig::uniform(300, 2, 1.0, 0.5, 1.0, 0.6)).unwrap();
    let mut outcomes: Vec<Option<Vec<f64>>> = (0..12)
        .map(|i| replicate_values(&prepared.replicate(1, i), &MediationOptions::default()))
        .collect();
    outcomes.push(None);
    let (a, ka) = summarize(&names, &outcomes);
    outcomes.reverse();
    outcomes.swap(2, 7);
    let (b, kb) = summarize(&names, &outcomes);
    assert_eq!(ka, kb);
    for (x, y) in a.iter().zip(&b) {
        assert!((x.mean - y.mean).abs() <= 1e-12 * (1.0 + x.mean.abs()));
        assert!((x.mc_sd - y.mc_sd).abs() <= 1e-12 * (1.0 + x.mc_sd.abs()));
    }
}

#[test]
fn family_outputs_are_complete_and_reparseable() {
    let dir = tempfile::tempdir().unwrap();
    let summaries = run_family(Family::M5, &small_run(4, None)).unwrap();
    assert_eq!(summaries.len(), 5);
    for s in &summaries {
        assert_eq!(s.n_replicates + s.n_failures, 4);
        assert!(s
            .stats
            .iter()
            .all(|st| st.mc_sd >= 0.0 || st.mc_sd.is_nan()));
    }
    let paths = write_family_outputs(dir.path(), Family::M5, &summaries).unwrap();
    assert_eq!(paths.len(), QUANTITY_GROUPS.len() + 1);

    let mut total_rows = 0;
    for group in QUANTITY_GROUPS {
        let path = dir.path().join(format!("M5_{group}.csv"));
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        assert_eq!(
            rdr.headers().unwrap().iter().collect::<Vec<_>>(),
            SUMMARY_HEADER
        );
        let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        assert_eq!(rows.len() % 5, 0);
        for row in &rows {
            assert_eq!(&row[1], "p");
            let mean: f64 = row[4].parse().unwrap();
            let s = summaries.iter().find(|s| s.scenario_id == row[0]).unwrap();
            assert_eq!(mean, s.mean(&row[3]));
        }
        total_rows += rows.len();
    }
    assert_eq!(total_rows, 5 * simulation_quantities().len());

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("M5_summary.json")).unwrap())
            .unwrap();
    assert_eq!(json.as_array().unwrap().len(), 5);
}

#[test]
fn repeated_runs_emit_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let s = run_family(Family::S2, &small_run(3, None)).unwrap();
        write_family_outputs(dir.path(), Family::S2, &s).unwrap();
    }
    for entry in fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(a.path().join(&name)).unwrap(),
            fs::read(b.path().join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn single_mediator_families_report_effect_proportions() {
    let s = run_configs(&make_scenarios(Family::S1)[..1], &small_run(3, None)).unwrap();
    for q in ["product", "difference", "censor_rate"] {
        assert!(s[0].mean(q).is_finite(), "{q}");
    }
    let m = run_configs(&make_scenarios(Family::M4)[..1], &small_run(3, None)).unwrap();
    assert_eq!(m[0].axis_name, "r");
    assert_eq!(m[0].axis_value, 0.05);
}

#[test]
fn analysis_tables_have_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("cohort.csv");
    let ds = common::cohort_dataset(800, 0.85, 5);
    write_csv(&data, &ds, &cohort_mapping()).unwrap();
    let opts = AnalysisOptions {
        random_control: true,
        seed: 4,
        ..AnalysisOptions::default()
    };
    let result = run_analysis(&data, &cohort_mapping(), &opts).unwrap();
    assert_eq!(result.single.len(), 7);
    assert_eq!(result.single[6].mediator, RANDOM_CONTROL_NAME);
    assert_eq!(result.joint.mediator_names.len(), 6);

    let out = dir.path().join("out");
    write_analysis_outputs(&out, &result).unwrap();
    let t1: Vec<csv::StringRecord> = csv::Reader::from_path(out.join("table1.csv"))
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect();
    assert_eq!(t1.len(), 7);
    assert!(t1.iter().all(|r| r.len() == 6));
    let mut rdr = csv::Reader::from_path(out.join("table2.csv")).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["measure", "r2_tx", "r2_tm", "r2_txm", "r2_med", "sos"]
    );
    let t2: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(t2.len(), 5);
    for row in &t2 {
        let v: Vec<f64> = (1..6).map(|k| row[k].parse().unwrap()).collect();
        assert!((v[3] - (v[1] + v[0] - v[2])).abs() < 1e-12);
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["single"].as_array().unwrap().len(), 7);
}

#[test]
fn csv_round_trip_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.csv");
    let second = dir.path().join("b.csv");
    let ds = common::cohort_dataset(200, 0.7, 6);
    write_csv(&first, &ds, &cohort_mapping()).unwrap();
    let a = read_csv(&first, &cohort_mapping()).unwrap();
    assert_eq!(a.dropped_rows, 0);
    write_csv(&second, &a.dataset, &cohort_mapping()).unwrap();
    let b = read_csv(&second, &cohort_mapping()).unwrap();
    assert_eq!(a.dataset.outcomes(), ds.outcomes());
    assert_eq!(a.dataset.outcomes(), b.dataset.outcomes());
    assert_eq!(a.dataset.exposure(), b.dataset.exposure());
    assert_eq!(a.dataset.mediators(), b.dataset.mediators());
    assert_eq!(a.dataset.mediators().values(), ds.mediators().values());
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
}

#[test]
fn rows_with_missing_cells_are_dropped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let ds = common::cohort_dataset(120, 0.7, 9);
    write_csv(&path, &ds, &cohort_mapping()).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    for (k, bad) in [(3usize, "NA"), (10, ""), (50, "NaN")] {
        let mut cells: Vec<String> = lines[k].split(',').map(String::from).collect();
        cells[4] = bad.to_string();
        lines[k] = cells.join(",");
    }
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let loaded = read_csv(&path, &cohort_mapping()).unwrap();
    assert_eq!(loaded.dropped_rows, 3);
    assert_eq!(loaded.dataset.n(), 117);
}
