//! Cross-module behavior on micro-scale cohorts.

use std::collections::BTreeMap;

use lssl_core::analysis::{analyze, AnalysisConfig};
use lssl_core::downstream::{
    baseline_pretrain, crossval_split, extract_representations, train_classifier, BaselineConfig, BaselineKind,
    ClassifierConfig, HeadKind, Mode,
};
use lssl_core::model::{encode, init_model, ArchConfig};
use lssl_core::objective::build_pairs;
use lssl_core::synthgen::{generate_cohort, render_image, GeneratorConfig, Grid};
use lssl_core::trainer::{train, LambdaSetting, TrainConfig};
use lssl_core::verify::{condition1_score, condition2_score, factor_independence_report, ProbeSet};
use lssl_core::{Cohort, Group};

fn cohort(n: usize, seed: u64) -> Cohort {
    let cfg = GeneratorConfig {
        n_subjects: n,
        grid: Grid::square(8),
        ..GeneratorConfig::default()
    };
    generate_cohort(&cfg, seed).unwrap()
}

fn quick_train() -> TrainConfig {
    TrainConfig {
        epochs: 4,
        batch_images: 8,
        batch_pairs: 8,
        learning_rate: 3e-3,
        eval_every: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn tau_stays_unit_after_every_epoch() {
    let c = cohort(10, 1);
    let mut norms = Vec::new();
    let p0 = init_model(&ArchConfig::micro(), 2).unwrap();
    train(&c, p0, &quick_train(), &mut |e| {
        norms.push(e.params.tau_norm());
        assert_eq!(e.stats.tau_norm, e.params.tau_norm());
    })
    .unwrap();
    assert_eq!(norms.len(), 4);
    for n in norms {
        assert!((n - 1.0).abs() <= 1e-6, "{n}");
    }
}

#[test]
fn training_raises_alignment_on_micro_cohort() {
    let c = cohort(24, 3);
    let pairs = build_pairs(&c.manifest, 1.0).unwrap();
    let p0 = init_model(&ArchConfig::micro(), 4).unwrap();
    let before = condition1_score(&p0, &c.images, &pairs).unwrap().mean_cosine;
    let cfg = TrainConfig {
        epochs: 40,
        ..quick_train()
    };
    let out = train(&c, p0, &cfg, &mut |_| {}).unwrap();
    let after = condition1_score(&out.params, &c.images, &pairs).unwrap().mean_cosine;
    assert!(after > before + 0.3, "{before} -> {after}");
    assert!(after > 0.5, "{after}");
}

#[test]
fn analysis_and_verification_on_trained_micro_model() {
    let c = cohort(16, 5);
    let p0 = init_model(&ArchConfig::micro(), 6).unwrap();
    let params = train(&c, p0, &quick_train(), &mut |_| {}).unwrap().params;
    let report = analyze(&params, &c, &AnalysisConfig::default()).unwrap();
    assert_eq!(report.records.len(), 16);
    assert_eq!(report.traversal.psi_grid.len(), 5);
    assert_eq!(report.traversal.images.len(), 5);
    // Projections in the records agree with a fresh encoding.
    let first = &report.records[0];
    let z = encode(&c.images[0], &params).unwrap();
    let psi: f64 = z.as_slice().iter().zip(&params.tau).map(|(a, b)| a * b).sum();
    assert!((first.visits[0].psi_raw - psi).abs() < 1e-12);
    // Every control subject contributes a slope.
    let control = report.group(Group::Control).unwrap();
    assert_eq!(control.n_slopes, control.n_subjects);

    let corr = factor_independence_report(&report.records, &c.manifest).unwrap();
    assert_eq!(corr.factors.len(), 3);
    for f in &corr.factors {
        for r in [f.pearson, f.spearman].into_iter().flatten() {
            assert!((-1.0..=1.0).contains(&r));
        }
    }
    let probes = ProbeSet::from_manifest(&c.manifest, 4, 0.25, 1).unwrap();
    let c2 = condition2_score(&params, &probes, |a| render_image(a, Grid::square(8), 0.0, 0)).unwrap();
    assert_eq!(c2.factors.len(), 2);
    assert!(c2.factors.iter().all(|f| f.n == 4 && f.mean >= 0.0 && f.max >= f.mean));
}

#[test]
fn fold_invariant_holds_for_classification_runs() {
    let c = cohort(20, 7);
    let params = init_model(&ArchConfig::micro(), 8).unwrap();
    let folds = crossval_split(&c.manifest, 4, 9).unwrap();
    let mut sizes = folds.sizes();
    sizes.sort_unstable();
    assert!(sizes[sizes.len() - 1] - sizes[0] <= 1);
    for head in [HeadKind::Mlp, HeadKind::Gru] {
        let cfg = ClassifierConfig {
            head,
            epochs: 4,
            mlp_hidden: [4, 2],
            ..ClassifierConfig::default()
        };
        let before = params.clone();
        let res = train_classifier(&cfg, &folds, &c, &params).unwrap();
        assert_eq!(params, before);
        assert_eq!(res.folds.len(), 4);
        let total_test: usize = res.folds.iter().map(|f| f.n_test).sum();
        let expected = match head {
            HeadKind::Mlp => c.n_images(),
            HeadKind::Gru => c.manifest.subjects.len(),
        };
        assert_eq!(total_test, expected);
        for f in &res.folds {
            assert!((0.0..=1.0).contains(&f.accuracy));
            assert_eq!(f.curve.len(), 4);
            assert_eq!(f.curve.last(), Some(&f.accuracy));
        }
    }
}

#[test]
fn fine_tuning_leaves_the_pretrained_copy_alone() {
    let c = cohort(12, 10);
    let params = init_model(&ArchConfig::micro(), 11).unwrap();
    let reps_before = extract_representations(&params, &c.images).unwrap();
    let folds = crossval_split(&c.manifest, 3, 1).unwrap();
    let cfg = ClassifierConfig {
        head: HeadKind::Mlp,
        mode: Mode::FineTune,
        epochs: 2,
        mlp_hidden: [4, 2],
        ..ClassifierConfig::default()
    };
    train_classifier(&cfg, &folds, &c, &params).unwrap();
    assert_eq!(extract_representations(&params, &c.images).unwrap(), reps_before);
}

#[test]
fn autoencoder_baseline_is_the_zero_lambda_run() {
    let c = cohort(8, 12);
    let arch = ArchConfig::micro();
    let cfg = TrainConfig {
        epochs: 2,
        ..quick_train()
    };
    let (ae, _) = baseline_pretrain(BaselineKind::Ae, &c, &arch, &cfg, &BaselineConfig::default()).unwrap();
    let zero = TrainConfig {
        lambda: LambdaSetting::Fixed(0.0),
        ..cfg.clone()
    };
    let direct = train(&c, init_model(&arch, cfg.seed).unwrap(), &zero, &mut |_| {}).unwrap();
    assert_eq!(ae, direct.params);
}

#[test]
fn same_seed_same_everything() {
    let run = || {
        let c = cohort(10, 13);
        let p0 = init_model(&ArchConfig::micro(), 14).unwrap();
        let out = train(&c, p0, &quick_train(), &mut |_| {}).unwrap();
        let rep = analyze(&out.params, &c, &AnalysisConfig::default()).unwrap();
        let slopes: BTreeMap<String, Option<f64>> =
            rep.records.iter().map(|r| (r.subject_id.clone(), r.slope)).collect();
        (out.params, out.history, slopes)
    };
    assert_eq!(run(), run());
}
