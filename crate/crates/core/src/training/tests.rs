use super::*;
use crate::data::SurvivalRecord;
use crate::simulation::{simulate, Family, GeneratorSpec};

fn one_subject(time: f64, event: bool) -> Dataset {
    Dataset::new(vec!["x".into()], vec![SurvivalRecord { x: vec![0.0], time, event }]).unwrap()
}

/// Concat model whose log-hazard is the constant `ln c`.
fn constant_model(c: f64) -> HazardModel {
    let a = Architecture::new(1, vec![4], Conditioning::Concat);
    let mut m = HazardModel::new(a, 0).unwrap();
    for e in m.parameters_mut().iter_mut() {
        if e.name.starts_with("output") {
            e.tensor.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let idx = m.output_bias_index();
    m.parameters_mut().get_mut(idx).values_mut()[0] = c.ln();
    m
}

#[test]
fn constant_hazard_losses() {
    let c = 0.7;
    let m = constant_model(c);
    let rule = quadrature::rule(5).unwrap();
    let censored = nll_value(&m, &rule, &one_subject(2.0, false)).unwrap();
    assert!((censored - c * 2.0).abs() < 1e-14);
    let event = nll_value(&m, &rule, &one_subject(2.0, true)).unwrap();
    assert!((event - (-c.ln() + c * 2.0)).abs() < 1e-14);
}

#[test]
fn loss_difference_is_mean_cumulative_hazard_difference() {
    let data = simulate(
        &GeneratorSpec { n_train: 16, n_test: 1, ..GeneratorSpec::new(Family::Scenario2) },
        1,
    )
    .unwrap()
    .train;
    let mut arch = Architecture::new(1, vec![8, 8], Conditioning::Lora);
    arch.lora_rank = 3;
    let mut m = HazardModel::new(arch, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for e in m.parameters_mut().iter_mut() {
        e.tensor.values_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.8..0.8));
    }
    let (r3, r40) = (quadrature::rule(3).unwrap(), quadrature::rule(40).unwrap());
    let diff = nll_value(&m, &r3, &data).unwrap() - nll_value(&m, &r40, &data).unwrap();
    let xs = data.covariates();
    let a = m.cumulative_hazard_each(&xs, &data.times(), &r3).unwrap();
    let b = m.cumulative_hazard_each(&xs, &data.times(), &r40).unwrap();
    let mean: f64 = a.iter().zip(&b).map(|(p, q)| p - q).sum::<f64>() / a.len() as f64;
    assert!((diff - mean).abs() < 1e-12, "{diff} vs {mean}");
}

#[test]
fn adamw_examples() {
    let mut p = vec![1.5, -2.0];
    let mut state = AdamState::new([2]);
    adamw_step(&mut [&mut p], &[Some(&[0.0, 0.0])], &mut state, 0.1, 0.0);
    assert_eq!(p, vec![1.5, -2.0]);

    // One step from zero moments: m̂ = g and v̂ = g², so the step is lr·g/(|g|+ε).
    let (g, lr) = (0.3, 0.01);
    let mut q = vec![1.0];
    let mut state = AdamState::new([1]);
    adamw_step(&mut [&mut q], &[Some(&[g])], &mut state, lr, 0.0);
    let hand = 1.0 - lr * g / (g.abs() + 1e-8);
    assert!((q[0] - hand).abs() < 1e-15);

    let mut w = vec![2.0];
    let mut state = AdamState::new([1]);
    adamw_step(&mut [&mut w], &[Some(&[0.0])], &mut state, 0.01, 0.1);
    assert!((w[0] - 2.0 * (1.0 - 0.001)).abs() < 1e-15);
}

#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(cosine_lr(0.1, 0, 100), 0.1);
    assert!((cosine_lr(0.1, 50, 100) - 0.05).abs() < 1e-15);
    assert!(cosine_lr(0.1, 100, 100).abs() < 1e-15);
}

#[test]
fn split_is_stratified_and_disjoint() {
    let records = (0..100)
        .map(|i| SurvivalRecord { x: vec![i as f64], time: 1.0 + i as f64, event: i % 4 != 0 })
        .collect();
    let d = Dataset::new(vec!["x".into()], records).unwrap();
    let (tr, va) = stratified_split(&d, 0.2, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(tr.len() + va.len(), 100);
    assert_eq!(va.len(), 20);
    assert_eq!(va.iter().filter(|&&i| d.records[i].event).count(), 15);
    assert!(va.iter().all(|i| !tr.contains(i)));
}

#[test]
fn degenerate_inputs_are_rejected() {
    let censored = Dataset::new(
        vec!["x".into()],
        (0..10).map(|i| SurvivalRecord { x: vec![0.0], time: 1.0 + i as f64, event: false }).collect(),
    )
    .unwrap();
    let cfg = TrainingConfig { max_epochs: 1, ..TrainingConfig::default() };
    assert!(matches!(train(&cfg, &censored), Err(Error::DegenerateData(_))));
    let k0 = TrainingConfig { k_nodes: 0, ..cfg.clone() };
    assert!(matches!(train(&k0, &censored), Err(Error::InvalidOrder(0))));
    assert!(TrainingConfig::from_json(r#"{"batch_size": 0}"#).is_err());
    assert_eq!(TrainingConfig::from_json("{}").unwrap(), TrainingConfig::default());
}

fn small_data(seed: u64) -> Dataset {
    simulate(
        &GeneratorSpec { n_train: 200, n_test: 1, ..GeneratorSpec::new(Family::Scenario1) },
        seed,
    )
    .unwrap()
    .train
}

#[test]
fn training_is_deterministic() {
    let data = small_data(0);
    let cfg = TrainingConfig { max_epochs: 3, batch_size: 64, batch_norm: true, dropout: 0.1, ..TrainingConfig::default() };
    let (a, la) = train(&cfg, &data).unwrap();
    let (b, lb) = train(&cfg, &data).unwrap();
    assert_eq!(la, lb);
    for (x, y) in a.model.parameters().iter().zip(b.model.parameters().iter()) {
        let bx: Vec<u64> = x.tensor.values().iter().map(|v| v.to_bits()).collect();
        let by: Vec<u64> = y.tensor.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bx, by, "{}", x.name);
    }
    assert_eq!(la.records.len(), 3);
    assert!(la.to_ndjson().unwrap().lines().count() == 3);
}

#[test]
fn constant_rate_data_recovers_unit_hazard() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let records = (0..2000)
        .map(|_| {
            let t = -(1.0 - rng.random::<f64>()).ln();
            SurvivalRecord { x: vec![0.0], time: t, event: true }
        })
        .collect();
    let data = Dataset::new(vec!["x".into()], records).unwrap();
    let cfg = TrainingConfig { max_epochs: 15, ..TrainingConfig::default() };
    let (fit, _) = train(&cfg, &data).unwrap();
    for i in 1..=10 {
        let t = 0.1 * i as f64;
        let h = fit.model.hazard(&[0.0], t).unwrap();
        assert!((h - 1.0).abs() < 0.1, "t={t}: {h}");
    }
}

#[test]
fn search_space_sampling_respects_ranges() {
    let space = SearchSpace::default();
    let base = TrainingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1000 {
        let c = space.sample(&base, &mut rng);
        assert!([2, 3, 4].contains(&c.hidden.len()));
        assert!([32, 64, 128, 256].contains(&c.hidden[0]));
        assert!((1e-4..=1e-2).contains(&c.learning_rate));
        assert!((1e-8..=1e-3).contains(&c.weight_decay));
        assert!([0.0, 0.1, 0.3, 0.5].contains(&c.dropout));
        assert!([64, 128, 256].contains(&c.batch_size));
        assert_eq!(c.k_nodes, base.k_nodes);
    }
}

#[test]
fn single_trial_search_is_reproducible() {
    let data = small_data(1);
    let space = SearchSpace { hidden: vec![16], layers: vec![2], ..SearchSpace::default() };
    let base = TrainingConfig { max_epochs: 2, ..TrainingConfig::default() };
    let a = random_search(&space, 1, &base, &data, 3).unwrap();
    let b = random_search(&space, 1, &base, &data, 3).unwrap();
    assert_eq!(a.trials.len(), 1);
    assert_eq!(a.best_config, a.trials[0].config);
    assert_eq!(a.trials, b.trials);
}

#[test]
fn selection_prefers_ctd_then_ibs() {
    assert!(improves(0.7, 0.2, 0.6, 0.1));
    assert!(improves(0.7, 0.1, 0.7, 0.2));
    assert!(!improves(0.7, 0.3, 0.7, 0.2));
    assert!(improves(0.5, f64::NAN, f64::NAN, 0.1));
}
