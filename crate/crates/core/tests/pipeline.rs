use protoed_core::corpus::{Dataset, Mention, Paradigm, Schema, Sentence};
use protoed_core::encoder::EncoderConfig;
use protoed_core::method::{method_preset, ClMode, CrfKind, MethodConfig};
use protoed_core::proto::TransferKind;
use protoed_core::sampler::{most_frequent_types, sample_train_dev, split_class_transfer, SampleSpec};
use protoed_core::synthetic::{gen_synthetic, SyntheticSpec};
use protoed_core::tape::Tape;
use protoed_core::training::gradcheck::check_gradients;
use protoed_core::training::{
    build_loss, init_model, run_class_transfer, run_low_resource, train, BatchSpec, BranchKind, BranchPlan, ClQueue,
    ClResolved, LossContext, PreparedData, StepInputs, TrainOptions, CL_THRESHOLD,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig { buckets: 64, dim: 6, hidden: 8, context: 1, window: 128 }
}

fn toks(words: &str) -> Vec<String> {
    words.split_whitespace().map(String::from).collect()
}

/// Three sentences, two types with two mentions each, one two-token mention.
fn three_sentences() -> Dataset {
    let schema = Schema::new(["attack", "meet"]).unwrap();
    let sentences = vec![
        Sentence::new("a", toks("the army attacked the town"), vec![Mention::new(2, 3, "attack")]).unwrap(),
        Sentence::new("b", toks("leaders met and then fired shots"), vec![Mention::new(1, 2, "meet"), Mention::new(4, 6, "attack")])
            .unwrap(),
        Sentence::new("c", toks("they will meet today"), vec![Mention::new(2, 3, "meet")]).unwrap(),
    ];
    Dataset::new(schema, sentences, Paradigm::SequenceLabeling).unwrap()
}

fn unified_with(cl: ClMode, crf: CrfKind) -> MethodConfig {
    MethodConfig { cl, crf, ..method_preset("unified-baseline").unwrap() }
}

/// Worst relative error over restarts and all tensors, or only `only`.
fn worst_gradient_error(method: &MethodConfig, restarts: u64, only: Option<&str>) -> f64 {
    let d = three_sentences();
    let enc = tiny_encoder();
    let data = PreparedData::new(&d, &enc, 3).unwrap();
    let plan = BranchPlan::new(method, d.len(), CL_THRESHOLD);
    let spec = BatchSpec { batch_size: 3, episode: (1, 1), neg_ratio: 3 };
    let mut worst: f64 = 0.0;
    for r in 0..restarts {
        let params = init_model(method, 2, enc, r).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + r);
        let inputs = StepInputs::sample(&d, &data, &plan, &spec, &mut rng).unwrap();
        let queue = plan.uses_queue().then(|| {
            let width = protoed_core::training::model::transfer_width(method.transfer, enc.dim);
            let mut q = ClQueue::new(16).unwrap();
            for i in 0..16 {
                let v: Vec<f64> = (0..width).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                q.push(v.iter().map(|x| x / norm).collect(), i % 3);
            }
            q
        });
        let ctx = LossContext { method, plan: &plan, data: &data, queue: queue.as_ref() };
        for check in check_gradients(&params, &ctx, &inputs, 6, r).unwrap() {
            if only.is_some_and(|n| n != check.name) {
                continue;
            }
            assert!(check.checked > 0);
            worst = worst.max(check.rel_error);
        }
    }
    worst
}

#[test]
fn fused_gradient_label_and_contrastive() {
    for cl in [ClMode::InBatch, ClMode::Moco] {
        let err = worst_gradient_error(&unified_with(cl, CrfKind::None), 20, None);
        assert!(err <= 1e-4, "{cl:?}: {err}");
    }
}

#[test]
fn fused_gradient_with_crf() {
    for crf in [CrfKind::Vanilla, CrfKind::Pa] {
        let err = worst_gradient_error(&unified_with(ClMode::InBatch, crf), 20, None);
        assert!(err <= 1e-4, "{crf:?}: {err}");
    }
    // Collapsed transitions train on detached emissions; only their own
    // gradient is a true derivative of the loss.
    let err = worst_gradient_error(&unified_with(ClMode::InBatch, CrfKind::Cdt), 5, Some("crf.collapsed"));
    assert!(err <= 1e-4, "Cdt: {err}");
}

#[test]
fn preset_gradients() {
    for name in ["fine-tuning", "protonet", "pa-crf", "container", "container-adj", "fsls"] {
        let method = method_preset(name).unwrap();
        let only = (method.crf == CrfKind::Cdt).then_some("crf.collapsed");
        let err = worst_gradient_error(&method, 3, only);
        assert!(err <= 1e-4, "{name}: {err}");
    }
    let tapnet = MethodConfig { transfer: TransferKind::DownProjectNormalize(4), ..method_preset("l-tapnet-cdt").unwrap() };
    let err = worst_gradient_error(&tapnet, 3, Some("crf.collapsed"));
    assert!(err <= 1e-4, "l-tapnet-cdt: {err}");
}

#[test]
fn unified_without_contrast_is_adjusted_fsls() {
    let unified = unified_with(ClMode::None, CrfKind::None);
    let fsls = method_preset("fsls-adj").unwrap();
    let d = three_sentences();
    let enc = tiny_encoder();
    let data = PreparedData::new(&d, &enc, 3).unwrap();
    let plan_u = BranchPlan::new(&unified, d.len(), CL_THRESHOLD);
    let plan_f = BranchPlan::new(&fsls, d.len(), CL_THRESHOLD);
    assert_eq!(plan_u, plan_f);
    let spec = BatchSpec { batch_size: 3, episode: (1, 1), neg_ratio: 3 };
    for seed in 0..5 {
        let pu = init_model(&unified, 2, enc, seed).unwrap();
        let pf = init_model(&fsls, 2, enc, seed).unwrap();
        let inputs = StepInputs::sample(&d, &data, &plan_u, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let loss = |method: &MethodConfig, params| {
            let mut tape = Tape::new(params);
            let ctx = LossContext { method, plan: &plan_u, data: &data, queue: None };
            let batch = build_loss(&mut tape, &ctx, &inputs).unwrap();
            assert_eq!(batch.branches.len(), 1);
            assert_eq!(batch.branches[0].0, BranchKind::Label);
            tape.scalar(batch.total).to_bits()
        };
        assert_eq!(loss(&unified, &pu), loss(&fsls, &pf));
    }
}

#[test]
fn branch_losses_sum_to_total() {
    let method = unified_with(ClMode::InBatch, CrfKind::Vanilla);
    let d = three_sentences();
    let enc = tiny_encoder();
    let data = PreparedData::new(&d, &enc, 3).unwrap();
    let plan = BranchPlan::new(&method, d.len(), CL_THRESHOLD);
    let params = init_model(&method, 2, enc, 4).unwrap();
    let spec = BatchSpec { batch_size: 3, episode: (1, 1), neg_ratio: 3 };
    let inputs = StepInputs::sample(&d, &data, &plan, &spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let mut tape = Tape::new(&params);
    let ctx = LossContext { method: &method, plan: &plan, data: &data, queue: None };
    let batch = build_loss(&mut tape, &ctx, &inputs).unwrap();
    let kinds: Vec<BranchKind> = batch.branches.iter().map(|b| b.0).collect();
    assert_eq!(kinds, [BranchKind::Label, BranchKind::Contrastive, BranchKind::Crf]);
    let parts: Vec<f64> = batch.branches.iter().map(|b| tape.scalar(b.1)).collect();
    assert_eq!(tape.scalar(batch.total), protoed_core::training::fused_loss(&parts).unwrap());
}

#[test]
fn plans_follow_presets() {
    let unified = method_preset("unified-baseline").unwrap();
    assert_eq!(BranchPlan::new(&unified, 40, CL_THRESHOLD).contrastive, Some(ClResolved::InBatch));
    assert_eq!(BranchPlan::new(&unified, 127, CL_THRESHOLD).contrastive, Some(ClResolved::InBatch));
    assert_eq!(BranchPlan::new(&unified, 128, CL_THRESHOLD).contrastive, Some(ClResolved::Moco));
    let proto = BranchPlan::new(&method_preset("protonet").unwrap(), 1000, CL_THRESHOLD);
    assert!(proto.contrastive.is_none() && !proto.uses_queue() && !proto.label);
    let ft = BranchPlan::new(&method_preset("fine-tuning").unwrap(), 10, CL_THRESHOLD);
    assert!(ft.linear && !ft.label && ft.prototype.is_none() && ft.contrastive.is_none());
}

fn small_benchmark(seed: u64) -> (Dataset, Dataset, Dataset) {
    let spec = |n, seed, prefix: &str| SyntheticSpec {
        n_types: 4,
        n_sentences: n,
        vocab_size: 30,
        id_prefix: prefix.into(),
        seed,
        ..SyntheticSpec::default()
    };
    let pool = gen_synthetic(&spec(200, 11, "pool")).unwrap();
    let test = gen_synthetic(&spec(100, 12, "test")).unwrap();
    let (train, dev) = sample_train_dev(&pool, &SampleSpec::new(2, 1, seed).unwrap()).unwrap();
    (train, dev, test)
}

fn quick_options() -> TrainOptions {
    TrainOptions {
        encoder: EncoderConfig { buckets: 512, dim: 16, hidden: 24, context: 2, window: 128 },
        lr_grid: vec![0.03, 0.1],
        steps: Some(15),
        source_steps: Some(15),
        ..TrainOptions::default()
    }
}

fn param_bits(m: &protoed_core::training::TrainedModel) -> Vec<(String, Vec<u64>)> {
    m.params.named_tensors().into_iter().map(|(n, _, v)| (n, v.iter().map(|x| x.to_bits()).collect())).collect()
}

#[test]
fn low_resource_is_bit_reproducible() {
    let (train_set, dev, test) = small_benchmark(3);
    let options = quick_options();
    let method = method_preset("unified-baseline").unwrap();
    let a = run_low_resource(&method, &train_set, &dev, &test, &options, 3, None).unwrap();
    let b = run_low_resource(&method, &train_set, &dev, &test, &options, 3, None).unwrap();
    assert_eq!(a.score.f1.to_bits(), b.score.f1.to_bits());
    assert_eq!(a.lr, b.lr);
    assert_eq!(param_bits(&a.model), param_bits(&b.model));
    assert_eq!(a.model.plan.contrastive, Some(ClResolved::InBatch));
}

#[test]
fn protonet_and_fine_tuning_train() {
    let (train_set, dev, test) = small_benchmark(5);
    let options = quick_options();
    for name in ["protonet", "fine-tuning"] {
        let out = run_low_resource(&method_preset(name).unwrap(), &train_set, &dev, &test, &options, 5, None).unwrap();
        assert!((0.0..=1.0).contains(&out.score.f1), "{name}");
        let ids: Vec<String> = out.model.params.named_tensors().into_iter().map(|t| t.0).collect();
        if name == "fine-tuning" {
            assert!(ids.iter().any(|n| n == "linear.weight") && !ids.iter().any(|n| n.starts_with("proto.")), "{ids:?}");
        }
    }
}

#[test]
fn empty_dev_uses_first_rate() {
    let (train_set, _, test) = small_benchmark(2);
    let empty = test.with_sentences(Vec::new()).unwrap();
    let out = run_low_resource(&method_preset("fsls").unwrap(), &train_set, &empty, &test, &quick_options(), 2, None).unwrap();
    assert_eq!(out.lr, 0.03);
    assert_eq!(out.dev_f1, None);
}

#[test]
fn class_transfer_without_source_is_low_resource() {
    let spec = SyntheticSpec { n_types: 6, n_sentences: 300, vocab_size: 30, id_prefix: "pool".into(), seed: 21, ..SyntheticSpec::default() };
    let pool = gen_synthetic(&spec).unwrap();
    let test_all = gen_synthetic(&SyntheticSpec { n_sentences: 120, id_prefix: "test".into(), seed: 22, ..spec.clone() }).unwrap();
    let source = most_frequent_types(&pool, 4);
    let split = split_class_transfer(&pool, &source).unwrap();
    let test = split_class_transfer(&test_all, &source).unwrap().target_pool;
    let (tt, td) = sample_train_dev(&split.target_pool, &SampleSpec::new(2, 1, 9).unwrap()).unwrap();
    let options = quick_options();
    let target = method_preset("unified-baseline").unwrap();
    let a = run_class_transfer(None, &target, &split, &tt, &td, &test, &options, 9).unwrap();
    let b = run_low_resource(&target, &tt, &td, &test, &options, 9, None).unwrap();
    assert_eq!(a.score, b.score);
    assert_eq!(param_bits(&a.model), param_bits(&b.model));

    let fsls = method_preset("fsls").unwrap();
    let c = run_class_transfer(Some(&fsls), &target, &split, &tt, &td, &test, &options, 9).unwrap();
    let source_model = train(&fsls, &split.source_data, &options, options.lr_grid[0], 15, 9, None).unwrap();
    let d = run_low_resource(&target, &tt, &td, &test, &options, 9, Some(&source_model.params.encoder)).unwrap();
    assert_eq!(param_bits(&c.model), param_bits(&d.model));
    assert_ne!(param_bits(&c.model), param_bits(&a.model));
    assert_eq!(c.model.schema.types(), split.target_types.as_slice());

    // Target data carrying a source type is refused.
    assert!(run_class_transfer(None, &target, &split, &split.source_data, &td, &test, &options, 9).is_err());
}
