#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seisbench::decoder::DecoderConfig;
use seisbench::encoders::{Archetype, EncoderConfig};
use seisbench::model::Model;
use seisbench::params::Bound;
use seisbench::seisdata::Gather;
use seisbench::tensor::{grad_check, grad_check_with, GradCheckReport, Graph, Stencil, Tensor, Var};
use seisbench::Result;

pub const H: f64 = 1e-5;
pub const TOL_F64: f64 = 1e-4;
/// Step for whole-model checks.
pub const H_MODEL: f64 = 3e-5;
/// Half-width of the uniform offset added to initial parameters before a
/// whole-model check.
pub const PERTURB: f64 = 0.1;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Contract `y` against a fixed random weight so every output element
/// contributes to the scalar.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = rand_tensor(&mut rng, g.shape(y));
    let r = g.constant(r);
    let m = g.mul(y, r)?;
    Ok(g.sum(m))
}

type Unary = Box<dyn Fn(&mut Graph<f64>, Var) -> Result<Var>>;

/// One finite-difference check per differentiable primitive and operand,
/// at 64-bit precision, over `coords` random coordinates.
pub fn primitive_gradient_suite(seed: u64, coords: usize) -> Vec<(String, GradCheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<(String, Vec<usize>, Unary)> = Vec::new();

    macro_rules! case {
        ($name:expr, $shape:expr, $f:expr) => {
            cases.push(($name.to_string(), $shape.to_vec(), Box::new($f)));
        };
    }

    let other = rand_tensor(&mut rng, &[3, 4]);
    let pos = Tensor::from_fn([3, 4], |i| 0.5 + (i as f64) * 0.1);
    {
        let o = other.clone();
        case!("add", [3, 4], move |g: &mut Graph<f64>, x| { let c = g.constant(o.clone()); g.add(x, c) });
    }
    {
        let o = other.clone();
        case!("sub", [3, 4], move |g: &mut Graph<f64>, x| { let c = g.constant(o.clone()); g.sub(c, x) });
    }
    {
        let o = other.clone();
        case!("mul", [3, 4], move |g: &mut Graph<f64>, x| { let c = g.constant(o.clone()); g.mul(x, c) });
    }
    {
        let o = other.clone();
        let p = pos.clone();
        case!("div.numerator", [3, 4], move |g: &mut Graph<f64>, x| { let _ = &o; let c = g.constant(p.clone()); g.div(x, c) });
    }
    {
        let o = other.clone();
        case!("div.denominator", [3, 4], move |g: &mut Graph<f64>, x| {
            let c = g.constant(o.clone());
            let d = g.add_scalar(x, 3.0);
            g.div(c, d)
        });
    }
    case!("scale", [3, 4], |g: &mut Graph<f64>, x| Ok(g.scale(x, -1.7)));
    case!("add_scalar", [3, 4], |g: &mut Graph<f64>, x| Ok(g.add_scalar(x, 0.3)));
    case!("square", [3, 4], |g: &mut Graph<f64>, x| Ok(g.square(x)));
    case!("abs", [3, 4], |g: &mut Graph<f64>, x| Ok(g.abs(x)));
    case!("gelu", [3, 4], |g: &mut Graph<f64>, x| Ok(g.gelu(x)));
    case!("mean", [3, 4], |g: &mut Graph<f64>, x| { let s = g.square(x); Ok(g.mean(s)) });
    {
        let o = other.clone();
        case!("l1_loss", [3, 4], move |g: &mut Graph<f64>, x| { let c = g.constant(o.clone()); g.l1_loss(x, c) });
    }
    {
        let o = other.clone();
        case!("l2_loss", [3, 4], move |g: &mut Graph<f64>, x| { let c = g.constant(o.clone()); g.l2_loss(c, x) });
    }
    case!("reshape", [3, 4], |g: &mut Graph<f64>, x| g.reshape(x, &[2, 6]));
    case!("transpose", [3, 4], |g: &mut Graph<f64>, x| g.transpose(x));
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let b = rand_tensor(&mut rng, if tb { &[5, 4] } else { &[4, 5] });
        let a = rand_tensor(&mut rng, if ta { &[4, 3] } else { &[3, 4] });
        let a_shape = a.shape().to_vec();
        let b_shape = b.shape().to_vec();
        case!(format!("matmul.lhs(ta={ta},tb={tb})"), a_shape, move |g: &mut Graph<f64>, x| {
            let c = g.constant(b.clone());
            g.matmul(x, c, ta, tb)
        });
        case!(format!("matmul.rhs(ta={ta},tb={tb})"), b_shape, move |g: &mut Graph<f64>, x| {
            let c = g.constant(a.clone());
            g.matmul(c, x, ta, tb)
        });
    }
    {
        let w = rand_tensor(&mut rng, &[5, 4]);
        let b = rand_tensor(&mut rng, &[5]);
        let x0 = rand_tensor(&mut rng, &[3, 4]);
        let (w1, b1) = (w.clone(), b.clone());
        case!("linear.input", [3, 4], move |g: &mut Graph<f64>, x| {
            let (w, b) = (g.constant(w1.clone()), g.constant(b1.clone()));
            g.linear(x, w, Some(b))
        });
        let (x1, b2) = (x0.clone(), b.clone());
        case!("linear.weight", [5, 4], move |g: &mut Graph<f64>, w| {
            let (x, b) = (g.constant(x1.clone()), g.constant(b2.clone()));
            g.linear(x, w, Some(b))
        });
        let (x2, w2) = (x0, w);
        case!("linear.bias", [5], move |g: &mut Graph<f64>, b| {
            let (x, w) = (g.constant(x2.clone()), g.constant(w2.clone()));
            g.linear(x, w, Some(b))
        });
    }
    for (k, stride, pad) in [(3, 1, 1), (2, 2, 0), (1, 1, 0), (3, 2, 1)] {
        let x0 = rand_tensor(&mut rng, &[2, 6, 6]);
        let w0 = rand_tensor(&mut rng, &[3, 2, k, k]);
        let b0 = rand_tensor(&mut rng, &[3]);
        let (w1, b1) = (w0.clone(), b0.clone());
        case!(format!("conv2d.input(k={k},s={stride},p={pad})"), [2, 6, 6], move |g: &mut Graph<f64>, x| {
            let (w, b) = (g.constant(w1.clone()), g.constant(b1.clone()));
            g.conv2d(x, w, Some(b), stride, pad)
        });
        let (x1, b2) = (x0.clone(), b0.clone());
        case!(format!("conv2d.kernel(k={k},s={stride},p={pad})"), [3, 2, k, k], move |g: &mut Graph<f64>, w| {
            let (x, b) = (g.constant(x1.clone()), g.constant(b2.clone()));
            g.conv2d(x, w, Some(b), stride, pad)
        });
        let (x2, w2) = (x0, w0);
        case!(format!("conv2d.bias(k={k},s={stride},p={pad})"), [3], move |g: &mut Graph<f64>, b| {
            let (x, w) = (g.constant(x2.clone()), g.constant(w2.clone()));
            g.conv2d(x, w, Some(b), stride, pad)
        });
    }
    {
        let x0 = rand_tensor(&mut rng, &[3, 8, 7]);
        let w0 = rand_tensor(&mut rng, &[3, 1, 7, 7]);
        let b0 = rand_tensor(&mut rng, &[3]);
        let (w1, b1) = (w0.clone(), b0.clone());
        case!("depthwise.input", [3, 8, 7], move |g: &mut Graph<f64>, x| {
            let (w, b) = (g.constant(w1.clone()), g.constant(b1.clone()));
            g.depthwise_conv2d(x, w, Some(b), 3)
        });
        let (x1, b2) = (x0.clone(), b0.clone());
        case!("depthwise.kernel", [3, 1, 7, 7], move |g: &mut Graph<f64>, w| {
            let (x, b) = (g.constant(x1.clone()), g.constant(b2.clone()));
            g.depthwise_conv2d(x, w, Some(b), 3)
        });
        let (x2, w2) = (x0, w0);
        case!("depthwise.bias", [3], move |g: &mut Graph<f64>, b| {
            let (x, w) = (g.constant(x2.clone()), g.constant(w2.clone()));
            g.depthwise_conv2d(x, w, Some(b), 3)
        });
    }
    {
        let x0 = rand_tensor(&mut rng, &[4, 6]);
        let g0 = rand_tensor(&mut rng, &[6]);
        let b0 = rand_tensor(&mut rng, &[6]);
        let (g1, b1) = (g0.clone(), b0.clone());
        case!("layernorm.input", [4, 6], move |g: &mut Graph<f64>, x| {
            let (gm, bt) = (g.constant(g1.clone()), g.constant(b1.clone()));
            g.layernorm(x, gm, bt, 1e-6)
        });
        let (x1, b2) = (x0.clone(), b0.clone());
        case!("layernorm.gamma", [6], move |g: &mut Graph<f64>, gm| {
            let (x, bt) = (g.constant(x1.clone()), g.constant(b2.clone()));
            g.layernorm(x, gm, bt, 1e-6)
        });
        let (x2, g2) = (x0, g0);
        case!("layernorm.beta", [6], move |g: &mut Graph<f64>, bt| {
            let (x, gm) = (g.constant(x2.clone()), g.constant(g2.clone()));
            g.layernorm(x, gm, bt, 1e-6)
        });
    }
    case!("softmax_rows", [3, 5], |g: &mut Graph<f64>, x| g.softmax_rows(x));
    {
        let k0 = rand_tensor(&mut rng, &[5, 4]);
        let v0 = rand_tensor(&mut rng, &[5, 4]);
        let q0 = rand_tensor(&mut rng, &[5, 4]);
        let (k1, v1) = (k0.clone(), v0.clone());
        case!("attention.q", [5, 4], move |g: &mut Graph<f64>, q| {
            let (k, v) = (g.constant(k1.clone()), g.constant(v1.clone()));
            g.attention(q, k, v)
        });
        let (q1, v2) = (q0.clone(), v0.clone());
        case!("attention.k", [5, 4], move |g: &mut Graph<f64>, k| {
            let (q, v) = (g.constant(q1.clone()), g.constant(v2.clone()));
            g.attention(q, k, v)
        });
        let (q2, k2) = (q0, k0);
        case!("attention.v", [5, 4], move |g: &mut Graph<f64>, v| {
            let (q, k) = (g.constant(q2.clone()), g.constant(k2.clone()));
            g.attention(q, k, v)
        });
    }
    case!("upsample2x", [2, 3, 4], |g: &mut Graph<f64>, x| g.upsample2x(x));
    {
        let x0 = rand_tensor(&mut rng, &[3, 3, 2]);
        let w0 = rand_tensor(&mut rng, &[3, 2, 2, 2]);
        let b0 = rand_tensor(&mut rng, &[2]);
        let (w1, b1) = (w0.clone(), b0.clone());
        case!("conv_transpose2x.input", [3, 3, 2], move |g: &mut Graph<f64>, x| {
            let (w, b) = (g.constant(w1.clone()), g.constant(b1.clone()));
            g.conv_transpose2x(x, w, Some(b))
        });
        let (x1, b2) = (x0.clone(), b0.clone());
        case!("conv_transpose2x.kernel", [3, 2, 2, 2], move |g: &mut Graph<f64>, w| {
            let (x, b) = (g.constant(x1.clone()), g.constant(b2.clone()));
            g.conv_transpose2x(x, w, Some(b))
        });
        let (x2, w2) = (x0, w0);
        case!("conv_transpose2x.bias", [2], move |g: &mut Graph<f64>, b| {
            let (x, w) = (g.constant(x2.clone()), g.constant(w2.clone()));
            g.conv_transpose2x(x, w, Some(b))
        });
    }
    {
        let idx: std::sync::Arc<[usize]> = vec![3, 0, 0, 7, 11, 5].into();
        case!("gather", [3, 4], move |g: &mut Graph<f64>, x| g.gather(x, idx.clone(), &[2, 3]));
    }
    {
        let o = rand_tensor(&mut rng, &[2, 4]);
        case!("concat0", [3, 4], move |g: &mut Graph<f64>, x| { let c = g.constant(o.clone()); g.concat0(&[c, x]) });
    }
    case!("slice0", [3, 4], |g: &mut Graph<f64>, x| g.slice0(x, 1, 2));
    {
        let o = rand_tensor(&mut rng, &[3, 2]);
        case!("concat_cols", [3, 4], move |g: &mut Graph<f64>, x| { let c = g.constant(o.clone()); g.concat_cols(&[x, c]) });
    }
    case!("slice_cols", [3, 4], |g: &mut Graph<f64>, x| g.slice_cols(x, 1, 2));

    let mut out = Vec::new();
    for (i, (name, shape, f)) in cases.into_iter().enumerate() {
        let point = rand_tensor(&mut rng, &shape);
        // keep |x| away from the abs kink
        let point = if name == "abs" { point.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v }) } else { point };
        let n = point.numel();
        let picks: Vec<usize> = (0..coords.min(n)).map(|_| rng.gen_range(0..n)).collect();
        let wseed = seed.wrapping_mul(31).wrapping_add(i as u64);
        let report = grad_check(
            |g, x| {
                let y = f(g, x)?;
                if g.value(y).numel() == 1 {
                    Ok(y)
                } else {
                    weighted_sum(g, y, wseed)
                }
            },
            &point,
            H,
            TOL_F64,
            Some(&picks),
        )
        .unwrap_or_else(|e| panic!("{name}: {e}"));
        out.push((name, report));
    }
    out
}

/// Small encoder presets that keep 16×16 gathers valid for every archetype.
pub fn tiny_encoder(arch: Archetype) -> EncoderConfig {
    let mut c = EncoderConfig::preset(arch);
    match arch {
        Archetype::GlobalAttnNonhierarchical => {
            c.stage_channels = [16; 4];
            c.stage_depths = [1, 1, 1, 1];
            c.tap_layers = [1, 2, 3, 4];
            c.patch_stride = 8;
        }
        _ => {
            c.stage_channels = [4, 8, 8, 16];
            c.stage_depths = [1, 1, 1, 1];
            c.patch_stride = 2;
            c.window = 2;
        }
    }
    c
}

/// Finite-difference check of the full encoder-decoder ℓ1 loss on a
/// 16×16 gather, over `coords` random parameter coordinates.
pub fn model_loss_gradient_check(arch: Archetype, skip: bool, seed: u64, coords: usize) -> GradCheckReport {
    model_loss_gradient_check_with_step(arch, skip, seed, coords, H_MODEL)
}

pub fn model_loss_gradient_check_with_step(arch: Archetype, skip: bool, seed: u64, coords: usize, h: f64) -> GradCheckReport {
    let hw = (16, 16);
    let dec = DecoderConfig {
        skip_connections: skip,
        head_channels: 4,
        ..DecoderConfig::default()
    };
    let model = Model::<f64>::build(&tiny_encoder(arch), &dec, hw, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let input = rand_tensor(&mut rng, &[1, 16, 16]);
    // Flatten all parameters into one vector so the checker perturbs them.
    let entries = model.store.entries();
    let sizes: Vec<usize> = entries.iter().map(|e| e.value.numel()).collect();
    let total: usize = sizes.iter().sum();
    let mut flat = Vec::with_capacity(total);
    // Evaluate away from the small-std init, where encoder gradients are
    // too attenuated for finite differences to resolve.
    for e in entries {
        flat.extend(e.value.data().iter().map(|v| v + rng.gen_range(-PERTURB..PERTURB)));
    }
    let point = Tensor::new([total], flat).unwrap();

    // Target sits a small signed offset from the prediction at `point`:
    // residuals stay well clear of the ℓ1 kink while the loss value, and
    // with it the roundoff in each finite difference, stays small.
    let mut at_point = model.clone();
    let mut off = 0;
    for e in at_point.store.entries().to_vec() {
        let n = e.value.numel();
        let id = at_point.store.id(&e.name).unwrap();
        at_point.store.get_mut(id).data_mut().copy_from_slice(&point.data()[off..off + n]);
        off += n;
    }
    let pred = at_point.predict(&input.clone().reshape([16, 16]).unwrap()).unwrap();
    let target = Tensor::new(
        [1, 16, 16],
        pred.data()
            .iter()
            .map(|p| p + rng.gen_range(0.01..0.03) * if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect(),
    )
    .unwrap();
    let picks: Vec<usize> = (0..coords).map(|_| rng.gen_range(0..total)).collect();

    grad_check_with(
        |g, theta| {
            // Slice the flat leaf back into per-tensor views.
            let mut off = 0;
            let mut vars = Vec::with_capacity(sizes.len());
            for (e, &n) in model.store.entries().iter().zip(&sizes) {
                let s = g.slice0(theta, off, n)?;
                vars.push(g.reshape(s, e.value.shape())?);
                off += n;
            }
            let bound = Bound::from_vars(vars);
            let x = g.constant(input.clone());
            let y = model.forward(g, &bound, x)?;
            let t = g.constant(target.clone());
            g.l1_loss(y, t)
        },
        &point,
        h,
        TOL_F64,
        Some(&picks),
        Stencil::CentralFourthOrder,
    )
    .unwrap()
}


pub fn random_gather(h: usize, w: usize, rng: &mut impl Rng) -> Gather {
    Gather::new(h, w, (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(), 0.004, 12.5).unwrap()
}

/// Direct double sum over every window, with the 2-D Gaussian built from
/// `exp(-(i² + j²) / 2σ²)` and normalized as a whole.
pub fn brute_force_ssim(a: &Gather, b: &Gather, range: f64) -> f64 {
    let n = 11usize;
    let half = 5.0;
    let mut k = vec![vec![0.0; n]; n];
    let mut s = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - half, j as f64 - half);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            s += *v;
        }
    }
    let (h, w) = a.shape();
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let mut total = 0.0;
    let mut count = 0;
    for r in 0..=h - n {
        for c in 0..=w - n {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let wgt = k[i][j] / s;
                    mx += wgt * a.get(r + i, c + j);
                    my += wgt * b.get(r + i, c + j);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let wgt = k[i][j] / s;
                    let (dx, dy) = (a.get(r + i, c + j) - mx, b.get(r + i, c + j) - my);
                    vx += wgt * dx * dx;
                    vy += wgt * dy * dy;
                    cxy += wgt * dx * dy;
                }
            }
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}
