//! Built-in property suite behind the `selftest` command. Every check uses
//! fixed seeds and reports a measured error against a tolerance, so the
//! printed report is reproducible byte for byte.

use std::fmt;

use crate::contrast::{contrast_index, BinaryMask};
use crate::data::{dice, iou};
use crate::error::Result;
use crate::model::{AblationMode, Bound, ModelConfig, SegModel};
use crate::rng::SplitMix64;
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::gradcheck::{grad_check, Coords, GradCheckConfig, GradCheckReport};
use crate::tensor::{AttentionParams, ConvParams, ConvSpec, Tape, Tensor, Var};
use crate::wavelet::{dwt2, idwt2, wavedec2, waverec2, Matrix2D};

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<34} measured={:.3e} tol={:.0e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

fn within(name: &str, measured: f64, tolerance: f64) -> PropertyResult {
    PropertyResult {
        name: name.to_string(),
        measured,
        tolerance,
        passed: measured.is_finite() && measured <= tolerance,
    }
}

fn from_grad(name: &str, r: Result<GradCheckReport>, tol: f64) -> PropertyResult {
    match r {
        Ok(r) if r.non_finite.is_none() => within(name, r.max_rel_error, tol),
        _ => within(name, f64::INFINITY, tol),
    }
}

fn random_matrix(rng: &mut SplitMix64, rows: usize, cols: usize) -> Matrix2D {
    Matrix2D::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
}

fn random_tensor(rng: &mut SplitMix64, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
}

fn random_mask(rng: &mut SplitMix64, rows: usize, cols: usize, p: f64) -> BinaryMask {
    BinaryMask::from_fn(rows, cols, |_, _| rng.next_f64() < p)
}

fn wavelet_properties(out: &mut Vec<PropertyResult>) -> Result<()> {
    let mut rng = SplitMix64::new(101);
    let (mut rec, mut energy, mut multi) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let m = random_matrix(&mut rng, 64, 64);
        let bands = dwt2(&m)?;
        rec = rec.max(idwt2(&bands)?.max_abs_diff(&m));
        energy = energy.max((bands.energy() - m.energy()).abs() / m.energy());
        multi = multi.max(waverec2(&wavedec2(&m, 3)?)?.max_abs_diff(&m));
    }
    out.push(within("haar_reconstruction_max_abs", rec, 1e-6));
    out.push(within("haar_energy_rel", energy, 1e-9));
    out.push(within("haar_3level_reconstruction_max_abs", multi, 1e-6));
    let h = dwt2(&Matrix2D::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]))?;
    let got = [h.ll.get(0, 0), h.hl.get(0, 0), h.lh.get(0, 0), h.hh.get(0, 0)];
    let want = [5.0, -1.0, -2.0, 0.0];
    let err = got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    out.push(within("haar_2x2_hand_case", err, 0.0));
    Ok(())
}

/// Brute-force contrast index: explicit loops over masked coefficients.
fn ci_oracle(c: &Matrix2D, m: &BinaryMask, eps: f64) -> f64 {
    let (rows, cols) = c.dims();
    let (mut sp, mut np, mut sb, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for r in 0..rows {
        for k in 0..cols {
            let v = c.get(r, k).abs();
            if m.get(r, k) {
                sp += v;
                np += 1;
            } else {
                sb += v;
                nb += 1;
            }
        }
    }
    if np == 0 || nb == 0 {
        return 0.0;
    }
    let (mp, mb) = (sp / np as f64, sb / nb as f64);
    (mp - mb).abs() / (mp + mb + eps)
}

fn contrast_properties(out: &mut Vec<PropertyResult>) -> Result<()> {
    let mut rng = SplitMix64::new(202);
    let (mut oracle, mut swap, mut outside) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let rows = 2 * rng.range_inclusive(1, 16) as usize;
        let cols = 2 * rng.range_inclusive(1, 16) as usize;
        let c = random_matrix(&mut rng, rows, cols);
        let p = rng.uniform(0.1, 0.9);
        let m = random_mask(&mut rng, rows, cols, p);
        let ci = contrast_index(&c, &m, 1e-8)?;
        oracle = oracle.max((ci - ci_oracle(&c, &m, 1e-8)).abs());
        swap = swap.max((ci - contrast_index(&c, &m.inverted(), 1e-8)?).abs());
        if !(0.0..1.0).contains(&ci) {
            outside += 1.0;
        }
    }
    out.push(within("ci_vs_bruteforce_oracle", oracle, 1e-12));
    out.push(within("ci_label_swap_symmetry", swap, 0.0));
    out.push(within("ci_outside_unit_interval_count", outside, 0.0));
    Ok(())
}

fn metric_properties(out: &mut Vec<PropertyResult>) -> Result<()> {
    let mut rng = SplitMix64::new(303);
    let mut err = 0.0f64;
    for _ in 0..2000 {
        let (pa, pb) = (rng.next_f64(), rng.next_f64());
        let a = random_mask(&mut rng, 8, 8, pa);
        let b = random_mask(&mut rng, 8, 8, pb);
        let (d, j) = (dice(&a, &b)?, iou(&a, &b)?);
        err = err.max((d - 2.0 * j / (1.0 + j)).abs());
    }
    out.push(within("dice_iou_identity", err, 1e-12));
    Ok(())
}

fn window_properties(out: &mut Vec<PropertyResult>) -> Result<()> {
    let mut rng = SplitMix64::new(404);
    let mut err = 0.0f64;
    for (shape, win) in [([2, 3, 8, 8], 4), ([1, 5, 12, 6], 3), ([3, 2, 4, 4], 1)] {
        let x = random_tensor(&mut rng, &shape);
        let mut t = Tape::inference();
        let v = t.constant(x.clone());
        let p = t.window_partition(v, win)?;
        let m = t.window_merge(p, shape[0], shape[2], shape[3], win)?;
        err = err.max(t.value(m).max_abs_diff(&x));
    }
    out.push(within("window_partition_merge_round_trip", err, 0.0));
    Ok(())
}

const GRAD_TOL: f64 = 1e-5;

fn check_op<F>(name: &str, seed: u64, shapes: &[&[usize]], op: F) -> PropertyResult
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = SplitMix64::new(seed);
    let inputs: Vec<Tensor> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
    let weights = {
        let mut t = Tape::inference();
        let vs: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        match op(&mut t, &vs) {
            Ok(y) => random_tensor(&mut rng, t.value(y).shape()),
            Err(_) => return within(name, f64::INFINITY, GRAD_TOL),
        }
    };
    let checked: Vec<usize> = (0..inputs.len()).collect();
    let r = grad_check(
        |t, v| {
            let y = op(t, v)?;
            t.weighted_sum(y, &weights)
        },
        &inputs,
        &checked,
        Coords::All,
        GradCheckConfig::with_tol(GRAD_TOL),
    );
    from_grad(name, r, GRAD_TOL)
}

fn gradient_properties(out: &mut Vec<PropertyResult>) {
    out.push(check_op("grad_conv2d_dilated", 1, &[&[2, 2, 6, 6], &[3, 2, 3, 3], &[3]], |t, v| {
        t.conv2d(v[0], ConvParams { weight: v[1], bias: Some(v[2]), spec: ConvSpec::same(2) })
    }));
    out.push(check_op("grad_conv2d_strided", 2, &[&[2, 2, 6, 6], &[3, 2, 2, 2], &[3]], |t, v| {
        t.conv2d(v[0], ConvParams { weight: v[1], bias: Some(v[2]), spec: ConvSpec::strided(2, 0) })
    }));
    out.push(check_op("grad_group_norm", 3, &[&[2, 4, 3, 3], &[4], &[4]], |t, v| {
        t.group_norm(v[0], v[1], v[2], 2)
    }));
    out.push(check_op(
        "grad_cross_attention",
        4,
        &[&[3, 4, 4], &[3, 4, 4], &[4, 4], &[4, 4], &[4, 4], &[4, 4]],
        |t, v| t.cross_attention(v[0], v[1], AttentionParams { wq: v[2], wk: v[3], wv: v[4], wo: v[5], heads: 2 }),
    ));
    out.push(check_op("grad_haar_dwt_idwt", 5, &[&[1, 2, 4, 6]], |t, v| {
        let d = t.haar_dwt(v[0])?;
        let s = t.sigmoid(d)?;
        t.haar_idwt(s)
    }));
    out.push(check_op("grad_window_ops", 6, &[&[2, 2, 4, 4]], |t, v| {
        let p = t.window_partition(v[0], 2)?;
        let s = t.sigmoid(p)?;
        t.window_merge(s, 2, 4, 4, 2)
    }));
    out.push(check_op("grad_upsample_concat_slice", 7, &[&[1, 2, 3, 3], &[1, 1, 6, 6]], |t, v| {
        let u = t.upsample_nearest_2x(v[0])?;
        let c = t.concat_channels(&[u, v[1]])?;
        let s = t.slice_channels(c, 1, 2)?;
        t.upsample_bilinear(s, 9, 12)
    }));
    let mut rng = SplitMix64::new(8);
    let logits = Tensor::from_fn(&[2, 1, 4, 4], |_| rng.uniform(-3.0, 3.0));
    let target = Tensor::from_fn(&[2, 1, 4, 4], |_| (rng.next_f64() < 0.4) as u8 as f64);
    let r = grad_check(
        |t, v| t.dice_bce_loss(v[0], &target),
        &[logits],
        &[0],
        Coords::All,
        GradCheckConfig::with_tol(GRAD_TOL),
    );
    out.push(from_grad("grad_dice_bce_loss", r, GRAD_TOL));
}

fn model_properties(out: &mut Vec<PropertyResult>) -> Result<()> {
    let full = SegModel::new(ModelConfig::default(), 7)?;
    let rgb = full.ablate(AblationMode::RgbOnly)?;
    let mut rng = SplitMix64::new(505);
    let mut err = 0.0f64;
    for _ in 0..10 {
        let x = Tensor::from_fn(&[1, 3, 64, 64], |_| rng.next_f64());
        err = err.max(full.logits(&x)?.max_abs_diff(&rgb.logits(&x)?));
    }
    out.push(within("identity_at_init_full_vs_rgb_only", err, 1e-5));

    let mut model = SegModel::new(ModelConfig::default(), 12)?;
    let names: Vec<String> = model.params().names().iter().filter(|n| n.ends_with(".wo")).cloned().collect();
    for n in names {
        let shape = model.params().by_name(&n).expect("listed").shape().to_vec();
        model.params_mut().set(&n, Tensor::from_fn(&shape, |_| rng.uniform(-0.3, 0.3)))?;
    }
    let x = Tensor::from_fn(&[2, 3, 32, 32], |_| rng.next_f64());
    let target = Tensor::from_fn(&[2, 1, 32, 32], |i| (((i / 32) % 32) * (i % 32) > 200) as u8 as f64);
    let mut inputs = model.params().tensors().to_vec();
    let np = inputs.len();
    inputs.push(x);
    let checked: Vec<usize> = (0..np).collect();
    let r = grad_check(
        |t, v| {
            let p = Bound::from_vars(v[..np].to_vec());
            let y = model.forward(t, &p, v[np])?;
            t.dice_bce_loss(y, &target)
        },
        &inputs,
        &checked,
        Coords::Sample { count: 5, seed: 17 },
        GradCheckConfig::with_tol(GRAD_TOL),
    );
    out.push(from_grad("grad_end_to_end_model_32x32", r, GRAD_TOL));

    let ckpt = model.to_checkpoint();
    let back = SegModel::from_checkpoint(&Checkpoint::from_bytes(&ckpt.to_bytes())?, Some(model.config()))?;
    let same = back.params() == model.params();
    out.push(within("checkpoint_round_trip_mismatches", if same { 0.0 } else { 1.0 }, 0.0));
    Ok(())
}

/// Runs every property. An error inside a group is reported as a failed
/// property rather than aborting the suite.
pub fn run() -> Vec<PropertyResult> {
    let mut out = Vec::new();
    let groups: [(&str, fn(&mut Vec<PropertyResult>) -> Result<()>); 5] = [
        ("wavelet", wavelet_properties),
        ("contrast", contrast_properties),
        ("metrics", metric_properties),
        ("window", window_properties),
        ("model", model_properties),
    ];
    for (name, f) in groups {
        if let Err(e) = f(&mut out) {
            out.push(PropertyResult {
                name: format!("{name}_group_error: {e}"),
                measured: f64::INFINITY,
                tolerance: 0.0,
                passed: false,
            });
        }
    }
    gradient_properties(&mut out);
    out
}
