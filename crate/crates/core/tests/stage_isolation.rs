// Kept in its own test binary: the fold counter is process-wide.

use selectmix::crossval::fold_trainings;
use selectmix::harness::{run_experiment, ExperimentConfig};
use selectmix::mixing::MixKind;

#[test]
fn only_guided_strategies_train_fold_models() {
    let base = ExperimentConfig {
        noise_rate: 0.2,
        epochs: 3,
        milestones: vec![2],
        synth_per_class: 60,
        synth_test_per_class: 20,
        ..ExperimentConfig::synthetic()
    };
    for kind in [MixKind::Erm, MixKind::Mixup] {
        run_experiment(&ExperimentConfig {
            strategy: kind,
            ..base.clone()
        })
        .unwrap();
        assert_eq!(fold_trainings(), 0, "{} trained fold models", kind.as_str());
    }
    run_experiment(&ExperimentConfig {
        strategy: MixKind::SelectMix,
        kfold: 3,
        ..base
    })
    .unwrap();
    assert_eq!(fold_trainings(), 3);
}
