//! Special functions backing the spectral-efficiency closed form.
//!
//! The average rate E[log(1 + aX)] with X ~ Exp(1) equals e^{1/a} E1(1/a),
//! so the two workhorses here are the exponential integral E1 and a
//! Gauss-Laguerre rule used as an independent quadrature cross-check.

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Exponential integral E1(z) for z > 0.
///
/// Power series below the crossover at z = 1, modified Lentz continued
/// fraction above it.
pub fn exp_integral_e1(z: f64) -> f64 {
    assert!(z > 0.0, "E1 requires z > 0, got {z}");
    if z <= 1.0 {
        e1_series(z)
    } else {
        e1_cf_scaled(z) * (-z).exp()
    }
}

/// Scaled exponential integral e^z E1(z), stable for arbitrarily large z.
pub fn exp_e1_scaled(z: f64) -> f64 {
    assert!(z > 0.0, "E1 requires z > 0, got {z}");
    if z <= 1.0 {
        z.exp() * e1_series(z)
    } else {
        e1_cf_scaled(z)
    }
}

// E1(z) = -gamma - ln z + sum_{k>=1} (-1)^{k+1} z^k / (k k!)
fn e1_series(z: f64) -> f64 {
    let mut sum = 0.0;
    let mut pow = 1.0; // z^k / k!
    for k in 1..=64u32 {
        pow *= z / f64::from(k);
        let term = pow / f64::from(k);
        if k % 2 == 1 {
            sum += term;
        } else {
            sum -= term;
        }
        if term < 1e-18 {
            break;
        }
    }
    -EULER_GAMMA - z.ln() + sum
}

// Continued fraction for e^z E1(z), z > 1, evaluated with modified Lentz.
fn e1_cf_scaled(z: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = z + 1.0;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..400u64 {
        let a = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (a * d + b);
        c = b + a / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Nodes and weights of the n-point Gauss-Laguerre rule for
/// ∫_0^∞ e^{-x} f(x) dx ≈ Σ w_i f(x_i).
pub fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let nf = n as f64;
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    let mut z = 0.0;
    for i in 0..n {
        // Stroud-Secrest style initial guesses, then Newton.
        if i == 0 {
            z = 3.0 / (1.0 + 2.4 * nf);
        } else if i == 1 {
            z += 15.0 / (1.0 + 2.5 * nf);
        } else {
            let ai = (i - 1) as f64;
            z += ((1.0 + 2.55 * ai) / (1.9 * ai)) * (z - xs[i - 2]);
        }
        let mut pp = 0.0;
        for _ in 0..100 {
            let (p1, p2) = laguerre_pair(n, z);
            pp = nf * (p1 - p2) / z;
            let z1 = z;
            z -= p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, p2) = laguerre_pair(n, z);
        xs[i] = z;
        ws[i] = -1.0 / (nf * p2 * pp);
    }
    (xs, ws)
}

// (L_n(z), L_{n-1}(z)) by the three-term recurrence.
fn laguerre_pair(n: usize, z: f64) -> (f64, f64) {
    let mut p1 = 1.0;
    let mut p2 = 0.0;
    for j in 0..n {
        let jf = j as f64;
        let p3 = p2;
        p2 = p1;
        p1 = ((2.0 * jf + 1.0 - z) * p2 - jf * p3) / (jf + 1.0);
    }
    (p1, p2)
}
