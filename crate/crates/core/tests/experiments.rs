use survrank::cli::experiments::{median, stability, summarize, sweep_fusion};
use survrank::cli::ExperimentConfig;
use survrank::losses::LossKind;
use survrank::survdata::{generate_with_latent, oracle_risks, SynthConfig};
use survrank::trainer::SamplerKind;

fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += ((x[i] - x[j]).signum() * (y[i] - y[j]).signum()) as i64;
        }
    }
    s as f64 / (n * (n - 1) / 2) as f64
}

#[test]
fn oracle_risk_anticorrelates_with_latent_time() {
    let cfg = SynthConfig::with_unit_betas(2000, 8, 4, 3);
    let draw = generate_with_latent(&cfg).unwrap();
    let risks = oracle_risks(&cfg, &draw.dataset).unwrap();
    let tau = kendall_tau(&risks, &draw.latent_event_times);
    assert!(tau < -0.3, "kendall {tau}");
}

#[test]
fn default_censoring_in_expected_band() {
    for seed in 0..10 {
        let draw = generate_with_latent(&SynthConfig::with_unit_betas(2000, 8, 4, seed)).unwrap();
        let c = draw.dataset.censoring_fraction();
        assert!((0.25..=0.45).contains(&c), "seed {seed}: {c}");
    }
}

#[test]
fn wci_fusion_interior_beats_grid_ends() {
    let cfg = ExperimentConfig {
        sweep_losses: vec![LossKind::Wci],
        ..ExperimentConfig::default()
    };
    let rows = summarize(&sweep_fusion(&cfg).unwrap());
    assert_eq!(rows.len(), 5);
    let ends = rows[0].median_ci.max(rows[4].median_ci);
    let interior = rows[1..4]
        .iter()
        .map(|r| r.median_ci)
        .fold(f64::MIN, f64::max);
    assert!(interior >= ends, "interior {interior} vs ends {ends}");
}

#[test]
fn skewed_sampling_widens_the_cv_gap() {
    let rows = stability(&ExperimentConfig::default()).unwrap();
    let gap = |policy: SamplerKind| {
        let gaps: Vec<f64> = (0..10)
            .map(|seed| {
                let cv = |loss| {
                    rows.iter()
                        .find(|r| r.policy == policy && r.seed == seed && r.loss == loss)
                        .and_then(|r| r.cv)
                        .unwrap()
                };
                cv(LossKind::Bci) - cv(LossKind::Wci)
            })
            .collect();
        median(&gaps)
    };
    let (skewed, uniform) = (gap(SamplerKind::Skewed), gap(SamplerKind::Uniform));
    assert!(skewed > 0.0);
    assert!(uniform < skewed, "uniform gap {uniform} vs skewed {skewed}");
}
