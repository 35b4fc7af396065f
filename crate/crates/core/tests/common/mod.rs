//! Finite-difference checks shared by the gradient and acceptance suites.

#![allow(dead_code)]

use icad_core::autodiff::{Graph, Var};
use icad_core::gradcheck::{check, Coords, GradCheckReport};
use icad_core::mask::MaskSpec;
use icad_core::net::{masked_l1_loss, Architecture, CompletionNet, InitConfig};
use icad_core::rng::{seeded, Rng};
use icad_core::tensor::Tensor;
use icad_core::Result;
use rand::Rng as _;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
/// Derivatives smaller than this are judged on absolute error.
pub const FLOOR: f64 = 1e-3;

/// `(kernel, dilation, stride)` of every distinct convolution in the network.
pub const CONV_CONFIGS: [(usize, usize, usize); 7] =
    [(5, 1, 1), (3, 1, 1), (3, 1, 2), (3, 2, 1), (3, 4, 1), (3, 8, 1), (3, 16, 1)];

pub struct Check {
    pub name: String,
    pub report: GradCheckReport,
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Uniform values that keep at least `gap` away from every kink.
fn uniform_avoiding(shape: &[usize], lo: f64, hi: f64, kinks: &[f64], gap: f64, rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| loop {
        let v = rng.random_range(lo..hi);
        if kinks.iter().all(|k| (v - k).abs() > gap) {
            break v;
        }
    })
}

/// `sum(w * y)` for a fixed random `w`, so every output coordinate matters.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let w = g.constant(uniform(&shape, -1.0, 1.0, &mut seeded(seed)));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn all(n: usize) -> Vec<Coords> {
    vec![Coords::All; n]
}

/// Smallest square input whose mirror padding fits, but at least 6.
fn conv_input_side(kernel: usize, dilation: usize) -> usize {
    (dilation * (kernel - 1) / 2 + 1).max(6)
}

pub fn conv_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (i, &(k, d, s)) in CONV_CONFIGS.iter().enumerate() {
        let mut rng = seeded(100 + i as u64);
        let n = conv_input_side(k, d);
        let leaves = [
            uniform(&[2, 2, n, n], -1.0, 1.0, &mut rng),
            uniform(&[3, 2, k, k], -0.5, 0.5, &mut rng),
            uniform(&[3], -0.5, 0.5, &mut rng),
        ];
        let report = check(&leaves, &all(3), STEP, FLOOR, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], d, s)?;
            weighted_sum(g, y, 7)
        })?;
        out.push(Check {
            name: format!("conv2d k={k} d={d} s={s} on {n}x{n}"),
            report,
        });
    }
    Ok(out)
}

pub fn elementwise_checks() -> Result<Vec<Check>> {
    let mut rng = seeded(200);
    let mut out = Vec::new();

    let x = uniform_avoiding(&[2, 1, 6, 6], -2.0, 2.0, &[0.0], 0.01, &mut rng);
    out.push(Check {
        name: "elu".into(),
        report: check(&[x], &all(1), STEP, FLOOR, |g, v| {
            let y = g.elu(v[0]);
            weighted_sum(g, y, 8)
        })?,
    });

    let leaves = [
        uniform(&[1, 2, 6, 6], -1.0, 1.0, &mut rng),
        uniform(&[2, 2, 3, 3], -0.5, 0.5, &mut rng),
        uniform(&[2], -0.5, 0.5, &mut rng),
    ];
    out.push(Check {
        name: "sum(elu(conv2d))".into(),
        report: check(&leaves, &all(3), STEP, FLOOR, |g, v| {
            let c = g.conv2d(v[0], v[1], v[2], 1, 1)?;
            let y = g.elu(c);
            Ok(g.sum(y))
        })?,
    });

    let x = uniform(&[2, 2, 4, 4], -1.0, 1.0, &mut rng);
    out.push(Check {
        name: "upscale2x".into(),
        report: check(&[x], &all(1), STEP, FLOOR, |g, v| {
            let y = g.upscale2x(v[0])?;
            weighted_sum(g, y, 9)
        })?,
    });

    let x = uniform_avoiding(&[1, 1, 8, 8], -2.0, 2.0, &[-1.0, 1.0], 0.01, &mut rng);
    out.push(Check {
        name: "clip".into(),
        report: check(&[x], &all(1), STEP, FLOOR, |g, v| {
            let y = g.clip(v[0], -1.0, 1.0)?;
            weighted_sum(g, y, 10)
        })?,
    });

    // f = x + e with |e| >= 0.05 keeps every pixel off the L1 kink
    let x = uniform(&[2, 1, 8, 8], -1.0, 1.0, &mut rng);
    let e = uniform_avoiding(&[2, 1, 8, 8], -0.5, 0.5, &[0.0], 0.05, &mut rng);
    let f = Tensor::from_fn(x.shape(), |i| x.data()[i] + e.data()[i]);
    let mask = MaskSpec::new(8, 2)?;
    out.push(Check {
        name: "masked_l1_loss (8x8, 2x2 hole)".into(),
        report: check(&[x.clone(), f.clone()], &all(2), STEP, FLOOR, |g, v| {
            masked_l1_loss(g, v[0], v[1], &mask, 0.9)
        })?,
    });
    out.push(Check {
        name: "mean_abs_diff".into(),
        report: check(&[x, f], &all(2), STEP, FLOOR, |g, v| g.mean_abs_diff(v[0], v[1]))?,
    });
    Ok(out)
}

/// Side of the square input used for the composed network check: large
/// enough for the dilation-16 layer after the stride-2 layer.
pub const NET_INPUT: usize = 36;

pub fn network_check() -> Result<Check> {
    let mut rng = seeded(300);
    let net = CompletionNet::<f64>::build_for(
        Architecture::Desk.layers(),
        NET_INPUT,
        InitConfig { sigma: 0.08 },
        &mut rng,
    )?;
    let mask = MaskSpec::new(NET_INPUT, 8)?;
    let clean = uniform(&[1, 1, NET_INPUT, NET_INPUT], -1.0, 1.0, &mut rng);
    let input = mask.apply(&clean)?;

    let mut leaves = vec![input];
    leaves.extend(net.parameters().iter().map(|p| p.value.clone()));
    let coords: Vec<Coords> = leaves
        .iter()
        .map(|t| Coords::Subset((0..6).map(|_| rng.random_range(0..t.numel())).collect()))
        .collect();
    let report = check(&leaves, &coords, STEP, FLOOR, |g, v| {
        let target = g.constant(clean.clone());
        let out = net.forward(g, &v[1..], v[0])?;
        masked_l1_loss(g, target, out, &mask, 0.9)
    })?;
    Ok(Check {
        name: format!("desk network + loss ({NET_INPUT}x{NET_INPUT}, sampled coordinates)"),
        report,
    })
}

pub fn all_checks() -> Result<Vec<Check>> {
    let mut out = conv_checks()?;
    out.extend(elementwise_checks()?);
    out.push(network_check()?);
    Ok(out)
}
