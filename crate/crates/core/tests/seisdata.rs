use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seisbench::seisdata::segy::{self, SampleFormat};
use seisbench::seisdata::*;
use seisbench::Error;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn one_layer(t_w: f64, r_wb: f64, thickness: f64, r: f64) -> LayeredModel {
    LayeredModel {
        layers: vec![Layer { thickness, r }],
        water_bottom_time: t_w,
        water_bottom_r: r_wb,
        wavelet_peak_freq: 20.0,
    }
}

#[test]
fn ricker_shape() {
    let w = ricker_wavelet(25.0, 0.002, 40).unwrap();
    assert_eq!(w.len(), 81);
    assert_eq!(w[40], 1.0);
    for i in 0..40 {
        assert_eq!(w[i], w[80 - i]);
    }
}

#[test]
fn ricker_integrates_to_zero() {
    // half-length of 4/f seconds
    for f in [10.0, 25.0, 40.0] {
        let dt = 0.001;
        let half = (4.0 / f / dt) as usize;
        let w = ricker_wavelet(f, dt, half).unwrap();
        let integral: f64 = w.iter().sum::<f64>() * dt;
        assert!(integral.abs() < 1e-3, "f={f}: {integral}");
    }
}

#[test]
fn ricker_rejects_nyquist() {
    assert!(ricker_wavelet(125.0, 0.004, 10).is_err());
    assert!(ricker_wavelet(124.0, 0.004, 10).is_ok());
}

#[test]
fn zero_water_bottom_contrast_gives_identical_pair() {
    let m = one_layer(0.1, 0.0, 0.1, 0.3);
    let p = synthesize_demultiple_pair(&m, 64, 32, 0.008, 1e-4, 1).unwrap();
    assert_eq!(p.sample.input, p.sample.label);
    assert!(p.multiples.samples().iter().all(|&v| v == 0.0));
}

#[test]
fn multiple_events_follow_closed_form() {
    let m = one_layer(0.2, 0.5, 0.15, 0.4);
    let events = demultiple_events(&m, 1e-4, 3).unwrap();
    let deep: Vec<_> = events.iter().filter(|e| e.parent == 1).collect();
    let t0 = 0.35;
    assert_eq!(deep[0].order, 0);
    assert!((deep[0].time0 - t0).abs() < 1e-12);
    assert!((deep[1].time0 - (t0 + 0.2)).abs() < 1e-12);
    assert!((deep[1].amplitude / deep[0].amplitude + 0.5).abs() < 1e-12);
    assert!((deep[2].time0 - (t0 + 0.4)).abs() < 1e-12);
    assert!((deep[2].amplitude / deep[0].amplitude - 0.25).abs() < 1e-12);
    assert_eq!(events.iter().map(|e| e.order).max(), Some(3));
}

#[test]
fn demultiple_identity_is_exact() {
    let cfg = DemultipleConfig::default();
    for seed in 0..5 {
        let mut r = rng(seed);
        let m = LayeredModel::random(&cfg.model, &mut r);
        let p = synthesize_demultiple_pair(&m, cfg.h, cfg.w, cfg.dt, 1e-4, seed).unwrap();
        let diff = p.sample.input.zip_with(&p.sample.label, |a, b| a - b).unwrap();
        assert_eq!(diff.samples(), p.multiples.samples());
        assert!(p.multiples.max_abs() > 0.0);
    }
}

#[test]
fn default_demultiple_gathers_are_64_by_512() {
    let d = demultiple_dataset(&DemultipleConfig::default(), 2, 0).unwrap();
    assert_eq!(d[0].input.shape(), (64, 512));
    assert!((d[0].input.std() - 1.0).abs() < 1e-6);
}

#[test]
fn empty_model_rejected() {
    let mut m = one_layer(0.1, 0.5, 0.1, 0.3);
    m.layers.clear();
    assert!(synthesize_demultiple_pair(&m, 64, 32, 0.008, 1e-4, 0).is_err());
}

#[test]
fn shot_first_breaks() {
    let m = one_layer(0.3, 0.5, 0.2, 0.3);
    let s = synthesize_shot_gather(&m, 1500.0, 300, 101, 0.004, 15.0, 0).unwrap();
    assert_eq!(s.first_break[0], 0);
    assert_eq!(s.first_break[100], 250);
    assert!(s.first_break.windows(2).all(|p| p[0] <= p[1]));
    // direct arrival peak at t = 0 on the zero-offset trace
    assert!((s.gather.get(0, 0) - 1.0).abs() < 1e-9);
    for (j, &fb) in s.first_break.iter().enumerate() {
        for r in 0..fb.min(300) {
            assert_eq!(s.gather.get(r, j), 0.0);
        }
    }
    assert!(synthesize_shot_gather(&m, 0.0, 300, 101, 0.004, 15.0, 0).is_err());
}

fn indexed(h: usize, w: usize) -> Gather {
    Gather::new(h, w, (0..h * w).map(|i| i as f64).collect(), 0.004, 12.5).unwrap()
}

#[test]
fn cuts_stay_in_feasible_set() {
    let g = indexed(800, 1151);
    let fb = vec![300; 1151];
    let mut r = rng(0);
    let (mut lo, mut hi) = (usize::MAX, 0);
    for _ in 0..10_000 {
        let c = random_cut_below_first_break(&g, &fb, 224, 224, &mut r).unwrap();
        let top = c.samples()[0] as usize / 1151;
        assert!((301..=576).contains(&top));
        lo = lo.min(top);
        hi = hi.max(top);
    }
    // the draw covers the feasible range
    assert!(lo < 310 && hi > 566, "{lo}..{hi}");
}

#[test]
fn cuts_respect_varying_first_breaks() {
    let g = indexed(200, 120);
    let fb: Vec<usize> = (0..120).map(|j| j + 10).collect();
    let mut r = rng(1);
    for _ in 0..2000 {
        let c = random_cut_below_first_break(&g, &fb, 32, 16, &mut r).unwrap();
        let first = c.samples()[0] as usize;
        let (top, left) = (first / 120, first % 120);
        assert!((left..left + 16).all(|j| top > fb[j]));
    }
}

#[test]
fn infeasible_cut_is_reported() {
    let g = indexed(100, 50);
    let fb = vec![80; 50];
    let r = random_cut_below_first_break(&g, &fb, 32, 16, &mut rng(0));
    assert!(matches!(r, Err(Error::Infeasible(_))), "{r:?}");
}

#[test]
fn masking_cases() {
    let g = indexed(4, 512);
    let m = mask_traces(&g, 0.0, MaskPattern::Random, &mut rng(0)).unwrap();
    assert!(m.mask.iter().all(|&b| !b));
    assert_eq!(m.masked, g);
    let m = mask_traces(&g, 1.0, MaskPattern::Random, &mut rng(0)).unwrap();
    assert!(m.masked.samples().iter().all(|&v| v == 0.0));
    let m = mask_traces(&g, 0.0, MaskPattern::Regular(4), &mut rng(0)).unwrap();
    assert_eq!(m.masked_fraction(), 0.75);
    assert!(!m.mask[0] && m.mask[1] && !m.mask[4]);
    for (i, &v) in m.masked.samples().iter().enumerate() {
        let j = i % 512;
        assert_eq!(v, if m.mask[j] { 0.0 } else { g.samples()[i] });
    }
}

#[test]
fn masking_fraction_concentrates() {
    let g = indexed(1, 512);
    let mean: f64 = (0..1000)
        .map(|s| mask_traces(&g, 0.3, MaskPattern::Random, &mut rng(s)).unwrap().masked_fraction())
        .sum::<f64>()
        / 1000.0;
    assert!((mean - 0.3).abs() < 0.01, "{mean}");
}

fn unit_gather(n: usize, seed: u64) -> Gather {
    use rand::Rng;
    let mut r = rng(seed);
    Gather::zeros(n, n, 0.004, 1.0).map(|_| r.gen_range(-1.0..1.0))
}

#[test]
fn noise_levels_and_variance_matching() {
    let g = unit_gather(1000, 3);
    let s = g.std();
    let zero = add_noise(&g, NoiseDist::Gaussian, 0.0, &mut rng(0)).unwrap();
    assert_eq!(zero.input, zero.label);
    for dist in [NoiseDist::Gaussian, NoiseDist::Uniform] {
        let t = add_noise(&g, dist, 0.2, &mut rng(1)).unwrap();
        let n = t.input.zip_with(&t.label, |a, b| a - b).unwrap();
        assert!((n.std() / (0.2 * s) - 1.0).abs() < 0.01, "{dist:?}: {}", n.std());
    }
    let a = add_noise(&g, NoiseDist::Uniform, 0.2, &mut rng(9)).unwrap();
    let b = add_noise(&g, NoiseDist::Uniform, 0.2, &mut rng(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn normalization_cases() {
    let g = unit_gather(50, 1);
    let (n, stats) = normalize(&g);
    assert!(n.mean().abs() < 1e-12 && (n.std() - 1.0).abs() < 1e-12);
    let (n2, _) = normalize(&n);
    for (a, b) in n.samples().iter().zip(n2.samples()) {
        assert!((a - b).abs() < 1e-12);
    }
    let back = denormalize(&n, &stats);
    for (a, b) in back.samples().iter().zip(g.samples()) {
        assert!((a - b).abs() < 1e-9);
    }
    let c = Gather::zeros(8, 8, 0.004, 1.0).map(|_| 0.1);
    let (z, stats) = normalize(&c);
    assert!(z.samples().iter().all(|&v| v == 0.0));
    assert_eq!(stats.std, STD_FLOOR);
}

#[test]
fn datasets_are_pure_functions_of_seed() {
    let cfg = TaskDataConfig {
        demultiple: DemultipleConfig { w: 64, ..DemultipleConfig::default() },
        ..TaskDataConfig::default()
    };
    for task in Task::ALL {
        let a = task_dataset(task, &cfg, 6, 42).unwrap();
        let b = task_dataset(task, &cfg, 6, 42).unwrap();
        let c = task_dataset(task, &cfg, 6, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a[0].input.shape(), cfg.sample_hw(task));
        // sample i does not depend on how many follow it
        let short = task_dataset(task, &cfg, 3, 42).unwrap();
        assert_eq!(short[..2], a[..2]);
        assert!(a.iter().all(|s| s.task == task));
    }
}

#[test]
fn held_out_denoise_samples_use_eval_distribution() {
    let cfg = TaskDataConfig::default();
    let d = task_dataset(Task::Denoise, &cfg, 20, 5).unwrap();
    assert_eq!(split_index(20), 18);
    let bound = 3f64.sqrt() * cfg.noise_level * 1.0 + 1e-9;
    let eval_noise = d[19].input.zip_with(&d[19].label, |a, b| a - b).unwrap();
    assert!(eval_noise.max_abs() <= bound * d[19].label.std().max(1.0));
}

#[test]
fn ibm_float_words() {
    assert_eq!(segy::ibm_to_f32(0x4264_0000), 100.0);
    assert_eq!(segy::ibm_to_f32(0xc264_0000), -100.0);
    assert_eq!(segy::ibm_to_f32(0), 0.0);
    assert_eq!(segy::f32_to_ibm(100.0), 0x4264_0000);
    assert_eq!(segy::ibm_to_f32(0x4110_0000), 1.0);
    for v in [1.0f32, -0.5, 0.15625, 3.0e5, 1.0 / 1024.0, 1.0e-3, 7.25, 16.0, 1.0 / 16.0] {
        let back = segy::ibm_to_f32(segy::f32_to_ibm(v));
        assert!((back - v).abs() <= v.abs() * 1e-6, "{v} -> {back}");
    }
}

fn crafted(format: SampleFormat) -> segy::SegyFile {
    let g = Gather::new(8, 3, (0..24).map(|i| (i as f64 - 11.0) * 0.25).collect(), 0.002, 25.0).unwrap();
    segy::from_gather(&g, 7, format).unwrap()
}

#[test]
fn segy_round_trips_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for format in [SampleFormat::Ieee, SampleFormat::Ibm] {
        let f = crafted(format);
        let path = dir.path().join("x.sgy");
        segy::write_segy(&path, &f).unwrap();
        let back = segy::read_segy(&path).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.ensembles[0].traces.len(), 3);
        let bits: Vec<u32> = back.ensembles[0].traces.iter().flat_map(|t| t.samples.iter().map(|v| v.to_bits())).collect();
        let want: Vec<u32> = f.ensembles[0].traces.iter().flat_map(|t| t.samples.iter().map(|v| v.to_bits())).collect();
        assert_eq!(bits, want);
        let g = back.ensembles[0].to_gather(back.dt(), 25.0).unwrap();
        assert_eq!(g.shape(), (8, 3));
    }
}

#[test]
fn segy_groups_by_ensemble() {
    let mut f = crafted(SampleFormat::Ieee);
    let mut other = f.ensembles[0].clone();
    other.number = 9;
    f.ensembles.push(other);
    let back = segy::parse_segy(&segy::encode_segy(&f).unwrap()).unwrap();
    assert_eq!(back.ensembles.iter().map(|e| e.number).collect::<Vec<_>>(), [7, 9]);
}

#[test]
fn segy_errors_carry_offsets() {
    let bytes = segy::encode_segy(&crafted(SampleFormat::Ieee)).unwrap();
    let mut bad = bytes.clone();
    bad[3225] = 3;
    assert!(matches!(segy::parse_segy(&bad), Err(Error::Parse { offset: 3224, .. })));
    let cut = &bytes[..bytes.len() - 5];
    match segy::parse_segy(cut) {
        Err(Error::Parse { offset, .. }) => assert_eq!(offset as usize, 3600 + 2 * (240 + 32)),
        other => panic!("{other:?}"),
    }
    let mut inconsistent = bytes.clone();
    inconsistent[3600 + 240 + 32 + 115] = 9;
    match segy::parse_segy(&inconsistent) {
        Err(Error::Parse { offset, .. }) => assert_eq!(offset as usize, 3600 + 272 + 114),
        other => panic!("{other:?}"),
    }
    assert!(matches!(segy::parse_segy(&bytes[..100]), Err(Error::Parse { .. })));
}

#[test]
fn segy_with_no_traces_is_empty() {
    let mut f = crafted(SampleFormat::Ieee);
    f.ensembles.clear();
    let back = segy::parse_segy(&segy::encode_segy(&f).unwrap()).unwrap();
    assert!(back.ensembles.is_empty());
}

#[test]
fn native_gather_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let g = unit_gather(64, 2);
    let p = dir.path().join("g.sgth");
    write_gather(&p, &g, SampleType::F64).unwrap();
    let back = read_gather(&p).unwrap();
    let bits = |g: &Gather| g.samples().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&g));
    assert_eq!(back.dt, 0.004f32 as f64);

    // f32 files round-trip bit-exactly once values are f32-representable
    let g32 = g.map(|v| v as f32 as f64);
    write_gather(&p, &g32, SampleType::F32).unwrap();
    assert_eq!(bits(&read_gather(&p).unwrap()), bits(&g32));
}

#[test]
fn native_file_size_and_header_checks() {
    let g = Gather::zeros(64, 512, 0.004, 12.5);
    let bytes = encode_gather(&g, SampleType::F32);
    // 14-byte header, samples, two f32 trailer fields
    assert_eq!(bytes.len(), 14 + 64 * 512 * 4 + 8);
    let mut bad = bytes.clone();
    bad[4] = 2;
    assert!(matches!(decode_gather(&bad), Err(Error::Parse { offset: 4, .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_gather(&bad), Err(Error::Parse { offset: 0, .. })));
    assert!(decode_gather(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn ibm_files_round_trip_arbitrary_samples() {
    let g = Gather::new(32, 4, (0..128).map(|i| (i as f64 * 0.731).sin() * 3.3).collect(), 0.004, 12.5).unwrap();
    let f = segy::from_gather(&g, 1, SampleFormat::Ibm).unwrap();
    let bytes = segy::encode_segy(&f).unwrap();
    let back = segy::parse_segy(&bytes).unwrap();
    assert_eq!(back, f);
    assert_eq!(segy::encode_segy(&back).unwrap(), bytes);
}
