use irt_core::analysis::{pearson_r, reliability_report};
use irt_core::irt::ModelKind;
use irt_core::posterior::{read_posterior, write_posterior};
use irt_core::synth::{recovery_report, simulate, GeneratorSpec};
use irt_core::vi::{fit, fit_beta, fit_joint, FitConfig, HyperPriors};

fn config(seed: u64) -> FitConfig {
    FitConfig {
        seed,
        epochs: 800,
        ..FitConfig::default()
    }
}

#[test]
fn two_pl_recovers_abilities_and_difficulties() {
    let spec = GeneratorSpec::new(40, 400, ModelKind::TwoPL).unwrap();
    let data = simulate(&spec, 21).unwrap();
    let out = fit(&data.responses, ModelKind::TwoPL, &config(21), &HyperPriors::default()).unwrap();
    let rec = recovery_report(&data.params, &out.posterior).unwrap();
    assert!(rec.family("ability").unwrap().kendall_tau >= 0.85, "{rec:?}");
    assert!(rec.family("difficulty").unwrap().kendall_tau >= 0.7, "{rec:?}");
    let rel = reliability_report(&data.responses, &out.posterior).unwrap();
    assert!(rel.ability_accuracy_tau >= 0.9);
    assert!(rel.difficulty_score_tau <= -0.8);
}

#[test]
fn fit_round_trips_through_json() {
    let spec = GeneratorSpec::new(8, 30, ModelKind::ThreePL).unwrap();
    let data = simulate(&spec, 4).unwrap();
    let out = fit(&data.responses, ModelKind::ThreePL, &config(4), &HyperPriors::default()).unwrap();
    let mut buf = Vec::new();
    write_posterior(&out.posterior, &mut buf).unwrap();
    assert_eq!(read_posterior(buf.as_slice()).unwrap(), out.posterior);
}

#[test]
fn confidence_models_recover_abilities() {
    let spec = GeneratorSpec::new(30, 300, ModelKind::JointConfidence).unwrap();
    let data = simulate(&spec, 8).unwrap();
    let conf = data.confidences.as_ref().unwrap();
    let joint = fit_joint(&data.responses, conf, &config(8), &HyperPriors::default()).unwrap();
    let rec = recovery_report(&data.params, &joint.posterior).unwrap();
    assert!(rec.family("ability").unwrap().kendall_tau >= 0.85, "{rec:?}");

    let beta = fit_beta(conf, &config(8), &HyperPriors::default()).unwrap();
    let r = pearson_r(&beta.posterior.ability.loc, &data.params.theta).unwrap();
    assert!(r >= 0.9, "beta ability correlation {r}");
}

#[test]
fn multidimensional_fit_matches_cell_probabilities() {
    // rotations make individual coordinates unidentifiable; compare the
    // implied success probabilities instead
    let spec = GeneratorSpec::new(30, 300, ModelKind::MultiDim2PL(2)).unwrap();
    let data = simulate(&spec, 13).unwrap();
    let out = fit(
        &data.responses,
        ModelKind::MultiDim2PL(2),
        &config(13),
        &HyperPriors::default(),
    )
    .unwrap();
    let fitted = out.posterior.point_estimates().probability_matrix();
    let truth = data.params.probability_matrix();
    let r = pearson_r(&fitted, &truth).unwrap();
    assert!(r >= 0.8, "probability correlation {r}");
}
