use super::{Graph, Tensor, Var};
use crate::error::{bail, Result};

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences with step `h`.
///
/// Returns `max_i |analytic_i − numeric_i| / max(1e-8, |analytic_i| + |numeric_i|)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if h <= 0.0 {
        bail!(InvalidInput, "finite-difference step must be positive, got {h}");
    }
    let mut g = Graph::new();
    let xv = g.param(x.clone())?;
    let root = f(&mut g, xv)?;
    let grads = g.backward(root)?;
    let analytic = grads.get_or_zeros(xv, x.len());

    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(t)?;
        let r = f(&mut g, v)?;
        Ok(g.item(r))
    };
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// A scalar test function of one input vector, as used by [`op_battery`].
pub type CheckFn = fn(&mut Graph, Var) -> Result<Var>;

fn fixed(n: usize, salt: usize) -> Vec<f64> {
    (0..n).map(|i| ((i * 7919 + salt * 104_729) % 23) as f64 / 11.0 - 1.0).collect()
}

fn as_rows(g: &mut Graph, x: Var, rows: usize) -> Result<Var> {
    let n = g.data(x).len();
    g.reshape(x, vec![rows, n / rows])
}

/// One scalar function per tensor op. Inputs are vectors of even length;
/// constants are derived from the length so every case is a plain `fn`.
pub fn op_battery() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("add_sub_mul", |g, x| {
            let n = g.data(x).len();
            let c = g.constant(Tensor::vector(fixed(n, 1)))?;
            let a = g.add(x, c)?;
            let m = g.mul(a, x)?;
            let s = g.sub(m, c)?;
            g.mean(s)
        }),
        ("div", |g, x| {
            let s = g.square(x)?;
            let d = g.add_scalar(s, 1.0)?;
            let y = g.div(x, d)?;
            g.mean(y)
        }),
        ("neg_scale_mean", |g, x| {
            let y = g.neg(x)?;
            let y = g.scale(y, 2.5)?;
            let y = g.mul(y, x)?;
            g.mean(y)
        }),
        ("sqrt_log", |g, x| {
            let s = g.square(x)?;
            let s = g.add_scalar(s, 0.5)?;
            let r = g.sqrt(s)?;
            let l = g.log(r)?;
            g.mean(l)
        }),
        ("exp_sigmoid", |g, x| {
            let e = g.scale(x, 0.5)?;
            let e = g.exp(e)?;
            let s = g.sigmoid(x)?;
            let y = g.mul(e, s)?;
            g.mean(y)
        }),
        ("sin_cos", |g, x| {
            let s = g.sin(x)?;
            let c = g.cos(x)?;
            let y = g.mul(s, c)?;
            g.mean(y)
        }),
        ("abs_leaky_relu", |g, x| {
            let a = g.abs(x)?;
            let l = g.leaky_relu(x, 0.2)?;
            let y = g.mul(a, l)?;
            g.mean(y)
        }),
        ("affine", |g, x| {
            let n = g.data(x).len();
            let w = g.constant(Tensor::new(vec![4, n], fixed(4 * n, 2))?)?;
            let b = g.constant(Tensor::vector(fixed(4, 3)))?;
            let y = g.affine(x, w, Some(b))?;
            let y = g.square(y)?;
            g.mean(y)
        }),
        ("causal_conv1d", |g, x| {
            let r = as_rows(g, x, 2)?;
            let w = g.constant(Tensor::new(vec![3, 2, 9], fixed(54, 4))?)?;
            let b = g.constant(Tensor::vector(fixed(3, 5)))?;
            let y = g.causal_conv1d(r, w, Some(b))?;
            let y = g.square(y)?;
            g.mean(y)
        }),
        ("upsample_downsample", |g, x| {
            let r = as_rows(g, x, 2)?;
            let u = g.avg_upsample2x(r)?;
            let u = g.square(u)?;
            let d = g.avg_downsample2x(u)?;
            let d = g.sin(d)?;
            g.mean(d)
        }),
        ("real_dft_power", |g, x| {
            let p = g.real_dft_power(x)?;
            let p = g.add_scalar(p, 1.0)?;
            let l = g.log(p)?;
            g.mean(l)
        }),
        ("reshape_concat_slice", |g, x| {
            let n = g.data(x).len();
            let a = g.slice(x, 0, n / 2)?;
            let b = g.slice(x, n / 2, n / 2)?;
            let b = g.square(b)?;
            let c = g.concat(&[b, a, x])?;
            let c = as_rows(g, c, 2)?;
            let c = g.sin(c)?;
            let s = g.mean(c)?;
            g.reshape(s, vec![])
        }),
        ("expand_channels_time", |g, x| {
            let n = g.data(x).len();
            let h = g.slice(x, 0, 3)?;
            let ec = g.expand_channels(h, n / 2)?;
            let t = g.slice(x, 0, n / 2)?;
            let et = g.expand_time(t, 3)?;
            let y = g.mul(ec, et)?;
            let y = g.sin(y)?;
            g.mean(y)
        }),
    ]
}

/// Finite-difference step used by [`check_battery`].
pub const BATTERY_STEP: f64 = 1e-4;

/// Worst relative error of each [`op_battery`] case and of each descriptor,
/// over `trials` standard-normal inputs. Op trial `t` uses length
/// `op_lengths[t % len]`, descriptor trials cycle through `desc_lengths`.
pub fn check_battery(
    seed: u64,
    trials: usize,
    op_lengths: &[usize],
    desc_lengths: &[usize],
) -> Result<Vec<(String, f64)>> {
    use crate::timbre::{descriptor_vars, Descriptor, DescriptorConfig, MIN_DESCRIPTOR_LEN};
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    if trials == 0 || op_lengths.is_empty() || desc_lengths.is_empty() {
        bail!(InvalidInput, "gradient battery needs at least one trial and one length of each kind");
    }
    if let Some(n) = op_lengths.iter().find(|n| **n < 4 || **n % 2 == 1) {
        bail!(InvalidInput, "op lengths must be even and at least 4, got {n}");
    }
    if let Some(n) = desc_lengths.iter().find(|n| **n < MIN_DESCRIPTOR_LEN) {
        bail!(InvalidInput, "descriptor lengths must be at least {MIN_DESCRIPTOR_LEN}, got {n}");
    }
    let input = |salt: u64, t: usize, lengths: &[usize]| {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(salt * 1_000_003 + t as u64);
        let n = lengths[t % lengths.len()];
        Tensor::vector((0..n).map(|_| rng.sample(StandardNormal)).collect())
    };
    let mut out = Vec::new();
    for (k, (name, f)) in op_battery().into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for t in 0..trials {
            worst = worst.max(grad_check(f, &input(k as u64, t, op_lengths), BATTERY_STEP)?);
        }
        out.push((name.to_string(), worst));
    }
    let cfg = DescriptorConfig::default();
    for d in Descriptor::ALL {
        let mut worst: f64 = 0.0;
        for t in 0..trials {
            let f = |g: &mut Graph, x: Var| Ok(descriptor_vars(g, x, 16000, &cfg)?.get(d));
            worst = worst.max(grad_check(f, &input(100 + d.index() as u64, t, desc_lengths), BATTERY_STEP)?);
        }
        out.push((d.name().to_string(), worst));
    }
    Ok(out)
}
