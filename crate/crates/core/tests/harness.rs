use cakecut::harness::{
    mc_queries, mc_sigma, read_csv, write_csv, ExperimentSpec, Mode, QueriesRow, SigmaRow,
    QUERIES_COLUMNS, SIGMA_COLUMNS,
};
use cakecut::models::ModelConfig;
use cakecut::Error;

fn sigma_spec(threads: usize) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(ModelConfig::h1(2), vec![2, 5, 12], 5.0, 300, 17);
    spec.threads = threads;
    spec
}

#[test]
fn sigma_tables_do_not_depend_on_threads() {
    let one = mc_sigma(&sigma_spec(1)).unwrap();
    let four = mc_sigma(&sigma_spec(4)).unwrap();
    assert_eq!(one.rows, four.rows);
    assert_eq!(one.trials, four.trials);
    assert_eq!(one.violation_count(), 0, "{:?}", one.summaries);
    assert_eq!(one.rows.len(), 3);
    assert!(one.rows.iter().all(|r| r.trials == 300 && r.model == "h1"));
}

#[test]
fn sigma_rows_are_ordered_by_trial() {
    let report = mc_sigma(&sigma_spec(3)).unwrap();
    for (k, t) in report.trials.iter().enumerate() {
        assert_eq!(t.trial, k as u64 % 300);
    }
}

#[test]
fn h2_keeps_the_diagonal_away_from_zero() {
    let spec = ExperimentSpec::new(ModelConfig::h2(3, 0.1), vec![3, 4, 5, 6, 7, 8, 9], 5.0, 200, 2);
    let report = mc_sigma(&spec).unwrap();
    assert_eq!(report.violation_count(), 0, "{:?}", report.summaries);
    assert!(report.rows.iter().all(|r| r.freq_d_component == 0.0));
}

#[test]
fn queries_table() {
    let mut spec = ExperimentSpec::new(ModelConfig::h1(3), vec![3, 4], 5.0, 40, 9);
    spec.mode = Mode::Audit;
    let report = mc_queries(&spec).unwrap();
    assert_eq!(report.violation_count(), 0, "{:?}", report.summaries);
    for row in &report.rows {
        assert_eq!(row.censored, 0);
        assert_eq!(row.audit_pass_rate, 1.0);
        assert!(row.c_min.unwrap() as f64 <= row.c_med.unwrap());
        assert!(row.c_med.unwrap() <= row.c_max.unwrap() as f64);
        assert_eq!(row.hits_c_ge_n7b, 0);
        assert!(row.webb_bound_med > 0.0 && row.sigma_bound_med > 0.0);
    }
    spec.mode = Mode::Sigma;
    assert!(matches!(mc_queries(&spec), Err(Error::Config(_))));
}

#[test]
fn identity_base_without_noise_is_the_shortcut() {
    use cakecut::linalg::{SquareMatrix, StochasticMatrix};
    use cakecut::models::Noise;
    let base = StochasticMatrix::new(SquareMatrix::from_rows(&[[0.8, 0.2], [0.2, 0.8]]).unwrap()).unwrap();
    let model = ModelConfig::h2(2, 0.1).with_base(base).with_noise(Noise::Zero);
    let mut spec = ExperimentSpec::new(model, vec![2], 5.0, 5, 0);
    spec.mode = Mode::Queries;
    let report = mc_queries(&spec).unwrap();
    assert_eq!(report.rows[0].c_min, Some(4));
    assert_eq!(report.rows[0].c_max, Some(4));
}

#[test]
fn csv_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let report = mc_sigma(&sigma_spec(1)).unwrap();
    let path = dir.path().join("sigma.csv");
    write_csv(&path, &SIGMA_COLUMNS, &report.rows[..1]).unwrap();
    let back: Vec<SigmaRow> = read_csv(&path).unwrap();
    assert_eq!(back, report.rows[..1]);

    let empty = dir.path().join("empty.csv");
    write_csv::<QueriesRow>(&empty, &QUERIES_COLUMNS, &[]).unwrap();
    assert_eq!(std::fs::read_to_string(&empty).unwrap(), QUERIES_COLUMNS.join(",") + "\n");
    assert!(read_csv::<QueriesRow>(&empty).unwrap().is_empty());

    let again = dir.path().join("again.csv");
    write_csv(&again, &SIGMA_COLUMNS, &mc_sigma(&sigma_spec(2)).unwrap().rows).unwrap();
    write_csv(&path, &SIGMA_COLUMNS, &report.rows).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn censored_statistics_stay_empty() {
    let dir = tempfile::tempdir().unwrap();
    let row = QueriesRow {
        model: "h1".into(),
        n: 3,
        b: 5.0,
        trials: 2,
        censored: 2,
        c_min: None,
        c_med: None,
        c_max: None,
        c_q99: None,
        hits_c_ge_n7b: 0,
        audit_pass_rate: f64::NAN,
        webb_bound_med: f64::NAN,
        sigma_bound_med: f64::NAN,
    };
    let path = dir.path().join("q.csv");
    write_csv(&path, &QUERIES_COLUMNS, std::slice::from_ref(&row)).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().nth(1).unwrap(), "h1,3,5.0,2,2,,,,,0,NaN,NaN,NaN");
    let back: Vec<QueriesRow> = read_csv(&path).unwrap();
    assert_eq!(back[0].c_min, None);
    assert!(back[0].audit_pass_rate.is_nan());
}
