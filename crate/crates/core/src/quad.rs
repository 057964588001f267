//! Adaptive 15-point Gauss-Kronrod quadrature.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One GK15 panel: `(kronrod estimate, |kronrod - gauss|)`.
fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for k in 0..7 {
        let dx = h * XGK[k];
        let pair = f(c - dx) + f(c + dx);
        kronrod += WGK[k] * pair;
        if k % 2 == 1 {
            gauss += WG[k / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Integrates `f` over `[a, b]` by recursive bisection until each panel's
/// Kronrod-Gauss gap is below its share of `abs_tol`.
pub(crate) fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
) -> Result<f64> {
    const MAX_PANELS: usize = 20_000;
    let mut stack = vec![(a, b, abs_tol)];
    let mut total = 0.0;
    let mut panels = 0;
    while let Some((lo, hi, tol)) = stack.pop() {
        panels += 1;
        if panels > MAX_PANELS {
            return Err(Error::Convergence(format!(
                "quadrature on [{a}, {b}] exceeded {MAX_PANELS} panels"
            )));
        }
        let (value, err) = gk15(&mut f, lo, hi);
        let mid = 0.5 * (lo + hi);
        if err <= tol || mid <= lo || mid >= hi {
            total += value;
        } else {
            stack.push((lo, mid, 0.5 * tol));
            stack.push((mid, hi, 0.5 * tol));
        }
    }
    Ok(total)
}
