use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seisbench::decoder::DecoderConfig;
use seisbench::encoders::{Archetype, EncoderConfig};
use seisbench::model::Model;
use seisbench::params::{ParameterStore, Partition};
use seisbench::seisdata::*;
use seisbench::tensor::{Graph, Tensor};
use seisbench::training::*;
use seisbench::Error;

fn gather(h: usize, w: usize, v: Vec<f64>) -> Gather {
    Gather::new(h, w, v, 0.004, 12.5).unwrap()
}

fn small_encoder() -> EncoderConfig {
    let mut c = EncoderConfig::preset(Archetype::ConvHierarchical);
    c.stage_channels = [4, 8, 16, 32];
    c.stage_depths = [1; 4];
    c.patch_stride = 2;
    c
}

fn small_decoder() -> DecoderConfig {
    DecoderConfig {
        head_channels: 4,
        ..DecoderConfig::default()
    }
}

fn small_data(task: Task, n: usize, seed: u64) -> Vec<TaskSample> {
    let cfg = TaskDataConfig {
        demultiple: DemultipleConfig {
            h: 32,
            w: 32,
            ..DemultipleConfig::default()
        },
        cut_h: 32,
        cut_w: 32,
        ..TaskDataConfig::default()
    };
    task_dataset(task, &cfg, n, seed).unwrap()
}

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch: 4,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_examples() {
    let z = gather(2, 2, vec![0.0; 4]);
    let p = gather(2, 2, vec![0.0, 1.0, 2.0, 3.0]);
    assert_eq!(l1_loss(&p, &z).unwrap(), 1.5);
    assert_eq!(l2_loss(&p, &z).unwrap(), 3.5);
    assert_eq!(l1_loss(&p, &p).unwrap(), 0.0);
    let q = p.map(|v| v + 1.0);
    assert_eq!(l1_loss(&q, &p).unwrap(), 1.0);
    assert_eq!(l2_loss(&q, &p).unwrap(), 1.0);
    assert!(matches!(l1_loss(&p, &gather(1, 4, vec![0.0; 4])), Err(Error::Shape(_))));
}

fn scalar_store(p: f64) -> ParameterStore<f64> {
    let mut s = ParameterStore::new();
    s.insert("enc.p", Partition::Encoder, Tensor::new(vec![1], vec![p]).unwrap()).unwrap();
    s
}

#[test]
fn adamw_first_step_closed_form() {
    let cfg = TrainConfig {
        lr: 0.1,
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let mut s = scalar_store(1.0);
    let mut opt = AdamW::new();
    opt.step(&mut s, &[Some(Tensor::new(vec![1], vec![1.0]).unwrap())], &cfg).unwrap();
    // bias-corrected moments are exactly g and g² after one step
    let want = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
    assert!((s.entries()[0].value.data()[0] - want).abs() < 1e-12);
}

#[test]
fn adamw_on_quadratic_matches_hand_update() {
    // f(p) = 0.5·a·p², gradient a·p
    let (a, p0, lr, wd) = (3.0, 0.7, 0.01, 0.05);
    let cfg = TrainConfig {
        lr,
        weight_decay: wd,
        ..TrainConfig::default()
    };
    let mut s = scalar_store(p0);
    let mut opt = AdamW::new();
    let (mut m, mut v, mut p) = (0.0, 0.0, p0);
    for t in 1..=3 {
        let g = a * s.entries()[0].value.data()[0];
        opt.step(&mut s, &[Some(Tensor::new(vec![1], vec![g]).unwrap())], &cfg).unwrap();
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        p = p - lr * wd * p - lr * mh / (vh.sqrt() + 1e-8);
        assert!((s.entries()[0].value.data()[0] - p).abs() < 1e-12);
    }
    assert_eq!(opt.steps(), 3);
}

#[test]
fn adamw_zero_gradient_without_decay_is_a_no_op() {
    let cfg = TrainConfig {
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let mut s = scalar_store(0.3);
    let mut opt = AdamW::new();
    for _ in 0..10 {
        opt.step(&mut s, &[Some(Tensor::new(vec![1], vec![0.0]).unwrap())], &cfg).unwrap();
    }
    assert_eq!(s.entries()[0].value.data()[0], 0.3);
}

#[test]
fn adamw_guards_the_freeze() {
    let cfg = TrainConfig::default();
    let mut s = scalar_store(0.3);
    s.insert("dec.q", Partition::Decoder, Tensor::new(vec![2], vec![1.0, 2.0]).unwrap())
        .unwrap();
    s.set_trainable(Partition::Encoder, false);
    let g1 = Some(Tensor::new(vec![1], vec![1.0]).unwrap());
    let g2 = Some(Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
    let mut opt = AdamW::new();
    let r = opt.step(&mut s, &[g1, g2.clone()], &cfg);
    assert!(matches!(r, Err(Error::FreezeViolation(ref n)) if n == "enc.p"), "{r:?}");
    assert!(opt.step(&mut s, &[None, None], &cfg).is_err());
    let before = s.partition_hash(Partition::Encoder);
    for _ in 0..100 {
        opt.step(&mut s, &[None, g2.clone()], &cfg).unwrap();
    }
    assert_eq!(s.partition_hash(Partition::Encoder), before);
    assert_ne!(s.entries()[1].value.data(), &[1.0, 2.0]);
}

#[test]
fn train_config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = [
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { batch: 0, ..TrainConfig::default() },
        TrainConfig { betas: (1.0, 0.9), ..TrainConfig::default() },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
    }
}

#[test]
fn strategy_checkpoint_consistency() {
    assert!(TrainingStrategy::scratch().validate().is_ok());
    assert!(TrainingStrategy::frozen("x").validate().is_ok());
    for kind in [StrategyKind::Frozen, StrategyKind::FineTuned] {
        let s = TrainingStrategy {
            kind,
            pretrained_checkpoint: None,
        };
        assert!(s.validate().is_err());
    }
    let s = TrainingStrategy {
        kind: StrategyKind::Scratch,
        pretrained_checkpoint: Some("x".into()),
    };
    assert!(s.validate().is_err());
    for k in StrategyKind::ALL {
        assert_eq!(k.as_str().parse::<StrategyKind>().unwrap(), k);
    }
}

fn model_store() -> ParameterStore<f32> {
    Model::<f32>::build(&small_encoder(), &small_decoder(), (32, 32), 5).unwrap().store
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = model_store();
    s.set_trainable(Partition::Encoder, false);
    let path = dir.path().join("m.spck");
    save_checkpoint(&s, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.len(), s.len());
    for (a, b) in s.entries().iter().zip(back.entries()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.partition, b.partition);
        assert_eq!(a.value.shape(), b.value.shape());
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }
    assert!(!back.is_trainable(Partition::Encoder));
    assert!(back.is_trainable(Partition::Decoder));
    for p in Partition::ALL {
        assert_eq!(back.partition_hash(p), s.partition_hash(p));
    }
}

#[test]
fn checkpoint_corruption_is_located() {
    let s = model_store();
    let bytes = encode_checkpoint(&s);
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Parse { offset: 4, .. })));
    // first tensor's name length field sits right after the 9-byte preamble
    let mut bad = bytes.clone();
    bad[9..13].copy_from_slice(&u32::MAX.to_le_bytes());
    match decode_checkpoint(&bad) {
        Err(Error::Parse { offset, .. }) => assert_eq!(offset, 13),
        other => panic!("{other:?}"),
    }
    let mut bad = bytes.clone();
    bad[5..9].copy_from_slice(&(s.len() as u32 + 1).to_le_bytes());
    match decode_checkpoint(&bad) {
        Err(Error::Parse { offset, .. }) => assert_eq!(offset as usize, bytes.len()),
        other => panic!("{other:?}"),
    }
    assert!(matches!(decode_checkpoint(b"NOPE"), Err(Error::Parse { offset: 0, .. })));
}

#[test]
fn encoder_only_checkpoint_leaves_decoder_at_init() {
    let dir = tempfile::tempdir().unwrap();
    let donor = Model::<f32>::build(&small_encoder(), &small_decoder(), (32, 32), 99).unwrap();
    let path = dir.path().join("enc.spck");
    save_checkpoint(&donor.store.subset(Partition::Encoder), &path).unwrap();
    let fresh = Model::<f32>::build(&small_encoder(), &small_decoder(), (32, 32), 1).unwrap();
    let m = initial_model(&small_encoder(), &small_decoder(), &TrainingStrategy::fine_tuned(&path), (32, 32), 1).unwrap();
    assert_eq!(m.store.partition_hash(Partition::Encoder), donor.store.partition_hash(Partition::Encoder));
    assert_eq!(m.store.partition_hash(Partition::Decoder), fresh.store.partition_hash(Partition::Decoder));
}

#[test]
fn mismatched_checkpoint_names_the_difference() {
    let dir = tempfile::tempdir().unwrap();
    let mut other = small_encoder();
    other.stage_depths = [1, 1, 2, 1];
    let donor = Model::<f32>::build(&other, &small_decoder(), (32, 32), 0).unwrap();
    let path = dir.path().join("enc.spck");
    save_checkpoint(&donor.store.subset(Partition::Encoder), &path).unwrap();
    let data = small_data(Task::Demultiple, 4, 0);
    let r = train_downstream(&small_encoder(), &small_decoder(), &TrainingStrategy::frozen(&path), &data, &quick(1, 0));
    match r {
        Err(Error::CheckpointMismatch(msg)) => assert!(msg.contains("stage2"), "{msg}"),
        other => panic!("{:?}", other.map(|r| r.loss_history)),
    }
}

fn checkpoint_for(dir: &std::path::Path) -> std::path::PathBuf {
    let donor = Model::<f32>::build(&small_encoder(), &small_decoder(), (32, 32), 42).unwrap();
    let path = dir.join("enc.spck");
    save_checkpoint(&donor.store.subset(Partition::Encoder), &path).unwrap();
    path
}

#[test]
fn strategies_touch_the_right_partitions() {
    let dir = tempfile::tempdir().unwrap();
    let ck = checkpoint_for(dir.path());
    let ck_hash = load_checkpoint(&ck).unwrap().partition_hash(Partition::Encoder);
    let data = small_data(Task::Demultiple, 8, 3);
    let enc = small_encoder();
    let dec = small_decoder();

    let frozen = train_downstream(&enc, &dec, &TrainingStrategy::frozen(&ck), &data, &quick(3, 0)).unwrap();
    assert_eq!(frozen.model.store.partition_hash(Partition::Encoder), ck_hash);
    assert_eq!(frozen.loss_history.len(), 3);

    let tuned = train_downstream(&enc, &dec, &TrainingStrategy::fine_tuned(&ck), &data, &quick(1, 0)).unwrap();
    assert_ne!(tuned.model.store.partition_hash(Partition::Encoder), ck_hash);

    let init = Model::<f32>::build(&enc, &dec, (32, 32), 0).unwrap();
    let scratch = train_downstream(&enc, &dec, &TrainingStrategy::scratch(), &data, &quick(1, 0)).unwrap();
    for p in Partition::ALL {
        assert_ne!(scratch.model.store.partition_hash(p), init.store.partition_hash(p));
    }
}

#[test]
fn training_is_deterministic() {
    let data = small_data(Task::Interpolation, 6, 1);
    let run = || train_downstream(&small_encoder(), &small_decoder(), &TrainingStrategy::scratch(), &data, &quick(2, 7)).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.loss_history, b.loss_history);
    for p in Partition::ALL {
        assert_eq!(a.model.store.partition_hash(p), b.model.store.partition_hash(p));
    }
}

#[test]
fn empty_or_mixed_datasets_rejected() {
    let r = train_downstream(&small_encoder(), &small_decoder(), &TrainingStrategy::scratch(), &[], &quick(1, 0));
    assert!(r.is_err());
    let mut data = small_data(Task::Denoise, 2, 0);
    let big = small_data(Task::Denoise, 1, 0);
    let wide = TaskSample::new(
        gather(32, 64, vec![0.0; 2048]),
        gather(32, 64, vec![0.0; 2048]),
        Task::Denoise,
    )
    .unwrap();
    data.push(big[0].clone());
    data.push(wide);
    let r = train_downstream(&small_encoder(), &small_decoder(), &TrainingStrategy::scratch(), &data, &quick(1, 0));
    assert!(matches!(r, Err(Error::Shape(_))));
}

#[test]
fn patch_masks_hide_exact_patch_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let m = patch_mask(64, 64, 0.6, &mut rng).unwrap();
    let hidden = m.iter().filter(|&&b| b).count();
    assert_eq!(hidden, 38 * 64);
    // whole patches only
    for pr in 0..8 {
        for pc in 0..8 {
            let first = m[pr * 8 * 64 + pc * 8];
            for r in 0..8 {
                for c in 0..8 {
                    assert_eq!(m[(pr * 8 + r) * 64 + pc * 8 + c], first);
                }
            }
        }
    }
    assert!(patch_mask(64, 64, 0.0, &mut rng).unwrap().iter().all(|&b| !b));
    assert!(patch_mask(20, 12, 1.0, &mut rng).unwrap().iter().all(|&b| b));
    assert!(patch_mask(8, 8, 1.5, &mut rng).is_err());
}

fn small_corpus(n: usize, seed: u64) -> Vec<Gather> {
    small_data(Task::Interpolation, n, seed).into_iter().map(|s| s.label).collect()
}

#[test]
fn unmasked_pretraining_reports_initial_reconstruction_loss() {
    let corpus = small_corpus(4, 2);
    let cfg = TrainConfig {
        epochs: 1,
        batch: 4,
        seed: 3,
        ..TrainConfig::default()
    };
    let pt = mim_pretrain(&small_encoder(), &corpus, 0.0, &cfg).unwrap();
    let m = mim_model(&small_encoder(), (32, 32), 3).unwrap();
    let mut want = 0.0;
    for g in &corpus {
        let x = Tensor::<f32>::new(vec![1, 32, 32], g.samples().iter().map(|&v| v as f32).collect()).unwrap();
        let mut graph = Graph::new();
        let p = m.store.bind_constants(&mut graph);
        let xv = graph.constant(x.clone());
        let y = m.forward(&mut graph, &p, xv).unwrap();
        let loss = graph.l1_loss(y, xv).unwrap();
        want += graph.value(loss).item().unwrap() as f64;
    }
    want /= corpus.len() as f64;
    assert!((pt.loss_history[0] - want).abs() < 1e-9, "{} vs {want}", pt.loss_history[0]);
}

#[test]
fn pretraining_exports_the_encoder_only() {
    let corpus = small_corpus(4, 1);
    let pt = mim_pretrain(&small_encoder(), &corpus, MIM_MASK_RATIO, &quick(1, 0)).unwrap();
    assert!(pt.encoder.entries().iter().all(|e| e.partition == Partition::Encoder));
    assert_eq!(pt.encoder.count(Partition::Encoder), pt.encoder_params);
    assert!((pt.decoder_params as f64) < 0.2 * pt.encoder_params as f64);
    assert!(mim_pretrain(&small_encoder(), &corpus, -0.1, &quick(1, 0)).is_err());
    assert!(mim_pretrain(&small_encoder(), &[], 0.5, &quick(1, 0)).is_err());
}

#[test]
fn pretraining_decoder_is_small_for_every_preset() {
    for arch in Archetype::ALL {
        let enc = EncoderConfig::preset(arch);
        let m = mim_model(&enc, (64, 64), 0).unwrap();
        assert!(!m.decoder.config().skip_connections);
        assert!((m.decoder.num_params() as f64) < 0.2 * m.encoder_params() as f64, "{arch}");
    }
}
