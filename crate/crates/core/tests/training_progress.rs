use qsurv::simulation::{simulate, Family, GeneratorSpec};
use qsurv::training::{train, TrainingConfig};

/// Seeds (out of 20) that must show a lower training loss at epoch 10 than at epoch 1.
const MIN_DECREASING_SEEDS: usize = 19;

#[test]
fn training_loss_falls_over_ten_epochs_on_scenario_one() {
    let mut decreasing = 0;
    let mut losses = Vec::new();
    for seed in 0..20u64 {
        let sim = simulate(&GeneratorSpec::new(Family::Scenario1), seed).unwrap();
        let config = TrainingConfig {
            max_epochs: 10,
            seed,
            ..TrainingConfig::default()
        };
        let (_, log) = train(&config, &sim.train).unwrap();
        let first = log.records[0].train_loss;
        let tenth = log.records[9].train_loss;
        assert_eq!((log.records[0].epoch, log.records[9].epoch), (1, 10));
        losses.push((first, tenth));
        if tenth < first {
            decreasing += 1;
        }
    }
    assert!(decreasing >= MIN_DECREASING_SEEDS, "{decreasing}/20 decreasing: {losses:?}");
}
