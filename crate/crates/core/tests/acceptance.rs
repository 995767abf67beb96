//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --release --test acceptance -- 5 6` runs only criteria 5 and 6.
//! The process exits non-zero on a FAIL only when `ACCEPTANCE_STRICT=1`.

mod common;

use std::time::Instant;

use quick_xml::events::Event;
use quick_xml::Reader;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seisbench::bench::{emit_report, run_experiment, scatter_svg, ExperimentConfig, ReportFormat, ReportRow, ScatterAxis};
use seisbench::encoders::{build_encoder, Archetype, EncoderConfig};
use seisbench::metrics::{mse, psnr, psnr_from_mse, ssim, PSNR_CAP_DB};
use seisbench::model::Model;
use seisbench::params::Partition;
use seisbench::seisdata::segy::{self, SampleFormat};
use seisbench::seisdata::*;
use seisbench::tensor::Tensor;
use seisbench::training::*;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn majority(wins: &[bool]) -> bool {
    wins.iter().filter(|&&w| w).count() >= 2
}

fn gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    for seed in SEEDS {
        for (name, r) in common::primitive_gradient_suite(seed, 20) {
            worst = worst.max(r.max_rel_err());
            if !r.passed() {
                failed.push(format!("{name}@{seed}"));
            }
        }
        for arch in Archetype::ALL {
            for skip in [true, false] {
                if !skip && arch != Archetype::ConvHierarchical {
                    continue;
                }
                let r = common::model_loss_gradient_check(arch, skip, seed, 20);
                worst = worst.max(r.max_rel_err());
                if !r.passed() {
                    failed.push(format!("model {arch} skip={skip}@{seed}"));
                }
            }
        }
    }
    outcome(failed.is_empty(), format!("max rel err {worst:.2e}; failures {failed:?}"))
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst: f64 = 0.0;
    let mut identity = true;
    for _ in 0..50 {
        let a = common::random_gather(32, 32, &mut rng);
        let noise = rng.gen_range(0.0..1.0);
        let b = a.map(|v| v + noise * rng.gen_range(-1.0..1.0));
        worst = worst.max((ssim(&a, &b, 2.0).unwrap() - common::brute_force_ssim(&a, &b, 2.0)).abs());
        identity &= ssim(&a, &a, 2.0).unwrap() == 1.0;
    }
    let g = |v: Vec<f64>| Gather::new(1, 2, v, 0.004, 12.5).unwrap();
    let (a, b) = (g(vec![0.0, 2.0]), g(vec![1.0, 1.0]));
    let closed = mse(&a, &b).unwrap() == 1.0
        && mse(&a, &a.map(|v| v + 2.0)).unwrap() == 4.0
        && psnr_from_mse(0.01, 1.0).unwrap() == 20.0
        && psnr_from_mse(4.0, 2.0).unwrap() == 0.0
        && psnr(&a, &a, 1.0).unwrap() == PSNR_CAP_DB;
    outcome(
        worst < 1e-9 && identity && closed,
        format!("max |fast - brute| {worst:.1e}; ssim(x,x)=1 {identity}; closed forms exact {closed}"),
    )
}

fn hierarchy_dichotomy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut wrong = Vec::new();
    for i in 0..20 {
        let arch = [Archetype::ConvHierarchical, Archetype::WindowedAttnHierarchical, Archetype::HybridHierarchical][i % 3];
        let mut c = EncoderConfig::preset(arch);
        c.stage_depths = [(); 4].map(|_| rng.gen_range(1..3));
        c.stage_channels = [(); 4].map(|_| 4 * rng.gen_range(1..4));
        c.patch_stride = rng.gen_range(1..3);
        c.window = 1;
        let unit = c.patch_stride * 8;
        let hw = (unit * rng.gen_range(1..3), unit * rng.gen_range(1..3));
        if !pyramid_is_hierarchical(&c, hw, i as u64) {
            wrong.push(format!("{arch} {hw:?}"));
        }

        let mut c = EncoderConfig::global_attention();
        let depth = rng.gen_range(4..7);
        c.stage_channels = [16; 4];
        c.stage_depths = [depth - 3, 1, 1, 1];
        c.tap_layers = seisbench::encoders::default_taps(depth);
        c.patch_stride = rng.gen_range(2..5);
        let hw = (c.patch_stride * 2 * rng.gen_range(1..3), c.patch_stride * 2 * rng.gen_range(1..3));
        if pyramid_is_hierarchical(&c, hw, i as u64) {
            wrong.push(format!("global {hw:?}"));
        }
    }
    outcome(wrong.is_empty(), format!("20 configs per side; misclassified {wrong:?}"))
}

fn pyramid_is_hierarchical(c: &EncoderConfig, hw: (usize, usize), seed: u64) -> bool {
    let (enc, store) = build_encoder::<f32>(c, hw, seed).unwrap();
    enc.encode(&store, &Tensor::from_fn([hw.0, hw.1], |i| (i as f32 * 0.37).sin())).unwrap().is_hierarchical()
}

fn freeze_invariant() -> Outcome {
    let base = ExperimentConfig::tiny(0);
    let enc = &base.encoders[0].config;
    let data = seisbench::bench::generate_split(&base, Task::Demultiple).unwrap().train;
    let corpus = pretraining_corpus(&base.data, 8, 77).unwrap();
    let pre = mim_pretrain(enc, &corpus, MIM_MASK_RATIO, &base.pretrain.train).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("enc.spck");
    save_checkpoint(&pre.encoder, &ck).unwrap();
    let before = load_checkpoint(&ck).unwrap().partition_hash(Partition::Encoder);

    let mut cfg = base.train.clone();
    cfg.epochs = 5;
    let hash = |s: TrainingStrategy| {
        train_downstream(enc, &base.decoder, &s, &data, &cfg)
            .unwrap()
            .model
            .store
            .partition_hash(Partition::Encoder)
    };
    let frozen_same = hash(TrainingStrategy::frozen(&ck)) == before;
    let tuned_moved = hash(TrainingStrategy::fine_tuned(&ck)) != before;
    let init = Model::<f32>::build(enc, &base.decoder, (32, 32), cfg.seed).unwrap().store.partition_hash(Partition::Encoder);
    let scratch_moved = hash(TrainingStrategy::scratch()) != init;
    outcome(
        frozen_same && tuned_moved && scratch_moved,
        format!("frozen unchanged {frozen_same}; fine-tuned changed {tuned_moved}; scratch changed {scratch_moved}"),
    )
}

fn single(rows: &[ReportRow], i: usize) -> (f64, f64) {
    let r = &rows[i];
    assert!(r.error.is_none(), "{}: {:?}", r.name, r.error);
    let m = &r.results[0].metrics;
    (m.ssim, m.psnr_db)
}

/// Criteria 5 and 6 share the skip=true desk runs.
fn desk_demultiple() -> (Outcome, Outcome) {
    let (mut hier, mut skip) = (Vec::new(), Vec::new());
    let (mut d5, mut d6) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::desk_demultiple(seed);
        cfg.output_dir = dir.path().to_path_buf();
        let rows = run_experiment(&cfg).unwrap();
        let (conv, conv_psnr) = single(&rows, 0);
        let (global, _) = single(&rows, 1);
        hier.push(conv > global);
        d5.push(format!("seed {seed}: {conv:.3} vs {global:.3}"));

        cfg.encoders.truncate(1);
        cfg.decoder.skip_connections = false;
        let (_, plain_psnr) = single(&run_experiment(&cfg).unwrap(), 0);
        skip.push(conv_psnr - plain_psnr >= 1.0);
        d6.push(format!("seed {seed}: {conv_psnr:.2} vs {plain_psnr:.2} dB"));
    }
    (
        outcome(majority(&hier), format!("conv vs global SSIM; {}", d5.join("; "))),
        outcome(majority(&skip), format!("skip vs no skip PSNR; {}", d6.join("; "))),
    )
}

fn strategy_ordering() -> Outcome {
    let mut wins = Vec::new();
    let mut detail = Vec::new();
    for seed in SEEDS {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::desk_transfer(seed);
        cfg.output_dir = dir.path().to_path_buf();
        let rows = run_experiment(&cfg).unwrap();
        let get = |k: StrategyKind| single(&rows, rows.iter().position(|r| r.strategy == k).unwrap());
        let (tuned, scratch, frozen) = (get(StrategyKind::FineTuned), get(StrategyKind::Scratch), get(StrategyKind::Frozen));
        wins.push(tuned.0 >= scratch.0 && scratch.0 >= frozen.0);
        detail.push(format!(
            "seed {seed}: SSIM {:.3}/{:.3}/{:.3} (PSNR {:.2}/{:.2}/{:.2})",
            tuned.0, scratch.0, frozen.0, tuned.1, scratch.1, frozen.1
        ));
    }
    outcome(majority(&wins), format!("fine-tuned/scratch/frozen; {}", detail.join("; ")))
}

fn data_pipeline() -> Outcome {
    let cfg = DemultipleConfig::default();
    let mut exact = true;
    for seed in 0..20 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let m = LayeredModel::random(&cfg.model, &mut r);
        let p = synthesize_demultiple_pair(&m, cfg.h, cfg.w, cfg.dt, 1e-4, seed).unwrap();
        let diff = p.sample.input.zip_with(&p.sample.label, |a, b| a - b).unwrap();
        exact &= diff.samples() == p.multiples.samples();
    }

    let shots = shot_gather_corpus(&ShotConfig::default(), 10, 5).unwrap();
    let mut touched = 0;
    let mut r = ChaCha8Rng::seed_from_u64(9);
    for s in &shots {
        let (h, w) = s.gather.shape();
        let idx = Gather::new(h, w, (0..h * w).map(|i| i as f64).collect(), s.gather.dt, s.gather.trace_spacing).unwrap();
        for _ in 0..1000 {
            let c = random_cut_below_first_break(&idx, &s.first_break, 64, 64, &mut r).unwrap();
            let first = c.samples()[0] as usize;
            let (top, left) = (first / w, first % w);
            touched += (left..left + 64).any(|j| top <= s.first_break[j]) as usize;
        }
    }

    let g = Gather::zeros(1, 512, 0.004, 12.5);
    let mean = (0..1000u64)
        .map(|s| {
            mask_traces(&g, 0.3, MaskPattern::Random, &mut ChaCha8Rng::seed_from_u64(s))
                .unwrap()
                .masked_fraction()
        })
        .sum::<f64>()
        / 1000.0;
    let near = (mean - 0.3).abs() <= 0.01;
    outcome(
        exact && touched == 0 && near,
        format!("input - label == multiples {exact}; cuts touching first break {touched}/10000; mean mask fraction {mean:.4}"),
    )
}

fn segy_io() -> Outcome {
    let ibm = segy::ibm_to_f32(0x4264_0000);
    let dir = tempfile::tempdir().unwrap();
    let mut exact = true;
    let crafted = Gather::new(16, 5, (0..80).map(|i| (i as f64 - 40.0) * 0.125).collect(), 0.002, 25.0).unwrap();
    let arbitrary = crafted.map(|v| (v * 1.37).sin() * 1e3);
    for (g, format) in [(&crafted, SampleFormat::Ieee), (&crafted, SampleFormat::Ibm), (&arbitrary, SampleFormat::Ieee), (&arbitrary, SampleFormat::Ibm)] {
        let f = segy::from_gather(g, 3, format).unwrap();
        let path = dir.path().join("x.sgy");
        segy::write_segy(&path, &f).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let back = segy::read_segy(&path).unwrap();
        segy::write_segy(&path, &back).unwrap();
        exact &= back == f && std::fs::read(&path).unwrap() == bytes;
    }
    outcome(ibm == 100.0 && exact, format!("0x42640000 -> {ibm}; round trip bit-exact {exact}"))
}

fn count_markers(svg: &str) -> usize {
    let mut reader = Reader::from_str(svg);
    let mut n = 0;
    loop {
        match reader.read_event().unwrap() {
            Event::Eof => return n,
            Event::Start(e) | Event::Empty(e) => {
                n += e.attributes().flatten().any(|a| a.key.as_ref() == b"class" && a.value.as_ref() == b"marker") as usize;
            }
            _ => {}
        }
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::tiny(11);
    cfg.output_dir = dir.path().to_path_buf();
    cfg.strategies = StrategyKind::ALL.to_vec();
    let mut csvs = Vec::new();
    let mut rows = Vec::new();
    for i in 0..2 {
        rows = run_experiment(&cfg).unwrap();
        let path = dir.path().join(format!("run{i}.csv"));
        emit_report(&rows, ReportFormat::Csv, &path).unwrap();
        csvs.push(std::fs::read(&path).unwrap());
    }
    let identical = csvs[0] == csvs[1];
    let lines = String::from_utf8_lossy(&csvs[0]).lines().count() - 1;
    let markers = count_markers(&scatter_svg(&rows, ScatterAxis::Params, false).unwrap());
    outcome(
        identical && markers == lines && lines > 0,
        format!("CSV identical {identical}; {lines} CSV rows, {markers} markers"),
    )
}

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |i: usize| only.is_empty() || only.contains(&i);
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let run = |i: usize, name: &'static str, f: &dyn Fn() -> Outcome, results: &mut Vec<_>| {
        if wanted(i) {
            let t = Instant::now();
            let o = f();
            let secs = t.elapsed().as_secs_f64();
            println!("{} criterion {i} ({name}) [{secs:.1}s]: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            results.push((i, name, o, secs));
        }
    };
    run(1, "gradient suite", &gradients, &mut results);
    run(2, "metric oracles", &metric_oracles, &mut results);
    run(3, "hierarchy dichotomy", &hierarchy_dichotomy, &mut results);
    run(4, "freeze invariant", &freeze_invariant, &mut results);
    if wanted(5) || wanted(6) {
        let t = Instant::now();
        let (o5, o6) = desk_demultiple();
        let secs = t.elapsed().as_secs_f64();
        for (i, name, o) in [(5, "hierarchical beats global attention", o5), (6, "skip connections add 1 dB", o6)] {
            if wanted(i) {
                println!("{} criterion {i} ({name}) [{secs:.0}s shared]: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
                results.push((i, name, o, secs));
            }
        }
    }
    run(7, "strategy ordering", &strategy_ordering, &mut results);
    run(8, "data pipeline", &data_pipeline, &mut results);
    run(9, "SEG-Y", &segy_io, &mut results);
    run(10, "end-to-end determinism", &determinism, &mut results);

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
    }
    if !failed.is_empty() && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
