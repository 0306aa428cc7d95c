//! Gauss–Kronrod (7/15) quadrature: a fixed composite rule and a globally
//! adaptive bisection driver.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

/// Gauss weights at `XGK[1], XGK[3], XGK[5], XGK[7]`.
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// One 15-point Kronrod panel on `[a, b]`: `(kronrod, |kronrod - gauss|)`.
pub fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = hw * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * hw, ((k - g) * hw).abs())
}

/// Abscissae and weights of the 15-point Kronrod rule on `[-1, 1]`.
pub fn kronrod_rule() -> ([f64; 15], [f64; 15]) {
    let mut x = [0.0; 15];
    let mut w = [0.0; 15];
    for j in 0..7 {
        x[j] = -XGK[j];
        x[14 - j] = XGK[j];
        w[j] = WGK[j];
        w[14 - j] = WGK[j];
    }
    w[7] = WGK[7];
    (x, w)
}

/// Composite rule with `panels` equal panels.
pub fn composite<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels.max(1);
    let w = (b - a) / panels as f64;
    let parts: Vec<f64> = (0..panels)
        .map(|i| {
            let lo = a + w * i as f64;
            let hi = if i + 1 == panels { b } else { lo + w };
            kronrod15(f, lo, hi).0
        })
        .collect();
    crate::linalg::pairwise_sum(&parts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub abs_error: f64,
    pub panels: usize,
}

/// Adaptive bisection of the panel with the largest error estimate until the
/// total estimate falls below `max(abs_tol, rel_tol |value|)` or `max_panels`
/// is reached.
pub fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> Quadrature {
    if a == b {
        return Quadrature {
            value: 0.0,
            abs_error: 0.0,
            panels: 0,
        };
    }
    let (v, e) = kronrod15(f, a, b);
    let mut panels = vec![(a, b, v, e)];
    loop {
        let value: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if err <= abs_tol.max(rel_tol * value.abs()) || panels.len() >= max_panels {
            let mut sorted = panels.clone();
            sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
            let values: Vec<f64> = sorted.iter().map(|p| p.2).collect();
            return Quadrature {
                value: crate::linalg::pairwise_sum(&values),
                abs_error: err,
                panels: panels.len(),
            };
        }
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, _, _) = panels.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = kronrod15(f, lo, mid);
        let (v2, e2) = kronrod15(f, mid, hi);
        panels.push((lo, mid, v1, e1));
        panels.push((mid, hi, v2, e2));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_weights_sum_to_two() {
        let g = 2.0 * (WG[0] + WG[1] + WG[2]) + WG[3];
        let k = 2.0 * WGK[..7].iter().sum::<f64>() + WGK[7];
        assert!((g - 2.0).abs() < 1e-14 && (k - 2.0).abs() < 1e-14);
    }

    #[test]
    fn exact_for_polynomials() {
        // Kronrod 15 integrates degree 22 exactly, Gauss 7 degree 13.
        for deg in 0..=22 {
            let (k, _) = kronrod15(&|x: f64| x.powi(deg), 0.0, 1.0);
            let exact = 1.0 / (deg as f64 + 1.0);
            assert!((k - exact).abs() < 1e-14, "degree {deg}: {k} vs {exact}");
        }
        let (_, err) = kronrod15(&|x: f64| x.powi(13), -1.0, 2.0);
        assert!(err < 1e-12);
    }

    #[test]
    fn adaptive_handles_peaks() {
        let f = |x: f64| (-1e2 * (x - 0.3) * (x - 0.3)).exp();
        let q = adaptive(&f, -5.0, 5.0, 1e-13, 1e-12, 2000);
        let exact = (std::f64::consts::PI / 1e2).sqrt();
        assert!((q.value - exact).abs() < 1e-11, "{q:?}");
    }

    #[test]
    fn composite_gaussian() {
        let f = |x: f64| (-0.5 * x * x).exp();
        let v = composite(&f, -10.0, 10.0, 40);
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-13);
    }
}
