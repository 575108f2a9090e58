use cakecut::linalg::{SquareMatrix, StochasticMatrix};
use cakecut::models::{measures_from_matrix, sample, textured_measures, uniform_grid, ModelConfig};
use cakecut::protocol::{
    audit_near_exact, envy_free, near_exact_divide, webb_super_envy_free, DivisionMethod,
    EpsilonMode, NearExactConfig,
};
use cakecut::rng::stream;
use cakecut::{Error, Interval, Mediator, PiecewiseConstantMeasure, SeedPath};

fn stochastic<const N: usize>(rows: [[f64; N]; N]) -> StochasticMatrix {
    StochasticMatrix::new(SquareMatrix::from_rows(&rows).unwrap()).unwrap()
}

fn mediator(m: &StochasticMatrix) -> Mediator {
    Mediator::new(measures_from_matrix(m, &uniform_grid(m.n())).unwrap())
}

#[test]
fn identity_witness_costs_four_queries() {
    let mut med = mediator(&stochastic([[1.0, 0.0], [0.0, 1.0]]));
    let report = envy_free(&mut med, &NearExactConfig::default()).unwrap();
    assert_eq!(report.queries.total, 4);
    assert_eq!(report.witness_queries, 4);
    assert!(report.cells.iter().all(|c| c.stats.method == DivisionMethod::Shortcut));
    assert!(report.audits.all_passed());
    assert_eq!(report.allocation.pieces[0].intervals(), &[Interval::new(0.0, 0.5).unwrap()]);
    assert_eq!(report.allocation.pieces[1].intervals(), &[Interval::new(0.5, 1.0).unwrap()]);
}

#[test]
fn two_by_two_instance() {
    let mut med = mediator(&stochastic([[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]]));
    let report = envy_free(&mut med, &NearExactConfig::default()).unwrap();
    assert!((report.t + 1.0).abs() < 1e-12);
    assert!((report.delta - 1.0 / 6.0).abs() < 1e-12);
    for c in &report.cells {
        assert!((c.ratios[c.cell] - 1.0).abs() < 1e-12, "{:?}", c.ratios);
    }
    let ef = report.audits.envy_free.worst_margin.unwrap();
    let sef = report.audits.super_envy_free.worst_margin.unwrap();
    assert!((ef - 1.0 / 3.0).abs() < 1e-12);
    assert!((sef - 1.0 / 6.0).abs() < 1e-12);
}

#[test]
fn random_instances_are_super_envy_free() {
    for mode in [EpsilonMode::Fast, EpsilonMode::Paper] {
        for n in 2..7 {
            for trial in 0..10 {
                let path = SeedPath::new(11, trial);
                let rec = sample(&ModelConfig::h1(n), path).unwrap();
                let mut med = mediator(&rec.m);
                let cfg = NearExactConfig {
                    epsilon_mode: mode,
                    seed: path.protocol_seed(n),
                    ..Default::default()
                };
                let report = envy_free(&mut med, &cfg).unwrap();
                assert!(report.audits.all_passed(), "n={n} trial={trial} {:?}", report.audits);
                report.allocation.validate().unwrap();
                let own = report.audits.super_envy_free.own_margin.unwrap();
                assert!(own >= report.delta - report.epsilon - 1e-9);
                let cells: u64 = report.cells.iter().map(|c| c.stats.queries).sum();
                assert_eq!(report.witness_queries + cells, report.queries.total);
            }
        }
    }
}

#[test]
fn textured_measures_need_refinement() {
    let n = 4;
    let rec = sample(&ModelConfig::h1(n), SeedPath::new(5, 0)).unwrap();
    let mut rng = stream(99, 0);
    let ms = textured_measures(&rec.m, &uniform_grid(n), 6, &mut rng).unwrap();
    let mut med = Mediator::new(ms);
    let report = envy_free(&mut med, &NearExactConfig { seed: 3, ..Default::default() }).unwrap();
    assert!(report.audits.all_passed(), "{:?}", report.audits);
    assert!(report.cells.iter().all(|c| c.near_exact.passed));
}

#[test]
fn near_exact_division_meets_its_contract() {
    let rec = sample(&ModelConfig::h1(3), SeedPath::new(8, 1)).unwrap();
    let mut rng = stream(1, 0);
    let ms = textured_measures(&rec.m, &uniform_grid(3), 5, &mut rng).unwrap();
    let mut med = Mediator::new(ms);
    let w = Interval::new(0.1, 0.9).unwrap();
    for (k, eps) in [0.2, 0.05, 0.01].into_iter().enumerate() {
        let ratios = [0.5, 0.3, 0.2];
        let div = near_exact_divide(&mut med, w, &ratios, eps, &NearExactConfig::default(), &mut stream(2, k as u64))
            .unwrap();
        let audit = audit_near_exact(med.measures(), w, &div.parts, &ratios, eps);
        assert!(audit.passed, "eps={eps} {audit:?}");
    }
}

#[test]
fn degenerate_ratio_gives_whole_cell() {
    let mut med = Mediator::new(vec![PiecewiseConstantMeasure::uniform(); 3]);
    let w = Interval::new(0.25, 0.75).unwrap();
    let div = near_exact_divide(&mut med, w, &[0.0, 1.0, 0.0], 1e-6, &NearExactConfig::default(), &mut stream(0, 0))
        .unwrap();
    assert_eq!(div.parts[1].intervals(), &[w]);
    assert!(div.parts[0].is_empty() && div.parts[2].is_empty());
    assert_eq!(med.ledger().total(), 0);
}

#[test]
fn identical_measures_are_singular() {
    let mut med = Mediator::new(vec![PiecewiseConstantMeasure::uniform(); 3]);
    match envy_free(&mut med, &NearExactConfig::default()) {
        Err(Error::SingularWitnessMatrix(w)) => {
            assert_eq!(w.matrices.len(), 2);
            assert!(w.sigma_n.iter().all(|s| *s < 1e-12));
        }
        other => panic!("expected a singular witness, got {other:?}"),
    }
}

#[test]
fn fixed_partition_rejects_singular_witness() {
    let mut med = Mediator::new(vec![PiecewiseConstantMeasure::uniform(); 2]);
    let r = webb_super_envy_free(&mut med, &uniform_grid(2), &NearExactConfig::default());
    assert!(matches!(r, Err(Error::Singular(_))));
}

#[test]
fn single_player_takes_everything() {
    let mut med = Mediator::new(vec![PiecewiseConstantMeasure::uniform()]);
    let report = envy_free(&mut med, &NearExactConfig::default()).unwrap();
    assert_eq!(report.allocation.pieces[0].intervals(), &[Interval::unit()]);
    assert!(report.cells.is_empty());
    assert!(report.audits.all_passed());
}

#[test]
fn runs_are_deterministic() {
    let go = || {
        let path = SeedPath::new(42, 3);
        let rec = sample(&ModelConfig::h2(5, 0.1), path).unwrap();
        let mut med = mediator(&rec.m);
        let cfg = NearExactConfig { seed: path.protocol_seed(5), ..Default::default() };
        serde_json::to_string(&envy_free(&mut med, &cfg).unwrap()).unwrap()
    };
    assert_eq!(go(), go());
}

#[test]
fn report_round_trips_through_json() {
    let rec = sample(&ModelConfig::h1(4), SeedPath::new(1, 0)).unwrap();
    let mut med = mediator(&rec.m);
    let report = envy_free(&mut med, &NearExactConfig::default()).unwrap();
    let back: cakecut::protocol::WebbReport =
        serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(back, report);
}
