//! The 3x3 MPI point-spread tensor.
//!
//! ```text
//! h(x) = [ L'(|Gx|/Hs) GxxᵀGᵀ/(|Gx| Hs) + L(|Gx|/Hs) (I - GxxᵀGᵀ/|Gx|²) ] G/|Gx|
//! ```
//!
//! with `Hs = 1/beta`, so the Langevin arguments read `beta*|Gx|` as in the
//! time-domain signal equation. The first term is the tangential-to-field
//! ("normal") response, the second the transverse one.

use super::langevin::{langevin, langevin_order};
use super::scanner::ScannerConfig;

pub type Mat3 = [[f64; 3]; 3];

/// Below this field magnitude (T) the removable singularity at the origin is
/// replaced by its limit `beta/3 * G`.
pub const SINGULAR_FIELD: f64 = 1e-9;

fn mat_vec(m: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2];
    }
    out
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Evaluates the PSF tensor at offset `x` (m) for gradient `g` and tracer `beta`.
pub fn psf_tensor_with(x: &[f64; 3], g: &Mat3, beta: f64) -> Mat3 {
    let u = mat_vec(g, x);
    let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    if norm < SINGULAR_FIELD {
        let mut out = *g;
        for row in out.iter_mut() {
            for v in row.iter_mut() {
                *v *= beta / 3.0;
            }
        }
        return out;
    }
    let arg = beta * norm;
    let normal = beta * langevin_order(arg, 1);
    // L(beta*|u|)/|u|, well conditioned through the series branch
    let transverse = beta * langevin(arg) / arg;
    let uh = [u[0] / norm, u[1] / norm, u[2] / norm];
    let mut j = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let outer = uh[a] * uh[b];
            let id = if a == b { 1.0 } else { 0.0 };
            j[a][b] = normal * outer + transverse * (id - outer);
        }
    }
    mat_mul(&j, g)
}

/// PSF tensor for a scanner configuration.
pub fn psf_tensor(x: &[f64; 3], cfg: &ScannerConfig) -> Mat3 {
    psf_tensor_with(x, &cfg.gradient_matrix, cfg.beta)
}

/// The `(3,3)` element alone, used by the analytic harmonic PSFs.
pub fn h33(x: &[f64; 3], g: &Mat3, beta: f64) -> f64 {
    psf_tensor_with(x, g, beta)[2][2]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ScannerConfig {
        ScannerConfig::default()
    }

    /// Independent evaluation: magnetization derivative `d/du [u/|u| L(beta|u|)]`
    /// by central differences, times `G`.
    fn tensor_by_differentiation(x: &[f64; 3], c: &ScannerConfig) -> Mat3 {
        let g = c.gradient_matrix;
        let u = mat_vec(&g, x);
        let m = |u: [f64; 3]| {
            let n = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
            let l = langevin(c.beta * n);
            [u[0] / n * l, u[1] / n * l, u[2] / n * l]
        };
        let n = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        let h = 1e-6 * n;
        let mut jac = [[0.0; 3]; 3];
        for b in 0..3 {
            let mut up = u;
            let mut dn = u;
            up[b] += h;
            dn[b] -= h;
            let (mp, mm) = (m(up), m(dn));
            for a in 0..3 {
                jac[a][b] = (mp[a] - mm[a]) / (2.0 * h);
            }
        }
        mat_mul(&jac, &g)
    }

    #[test]
    fn on_axis_column_has_no_off_diagonals() {
        let c = cfg();
        let h = psf_tensor(&[0.0, 0.0, 0.003], &c);
        assert_eq!(h[0][2], 0.0);
        assert_eq!(h[1][2], 0.0);
        assert!(h[2][2] > 0.0);
    }

    #[test]
    fn matches_differentiated_magnetization() {
        let c = cfg();
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.02
        };
        for _ in 0..10 {
            let x = [next(), next(), next()];
            let a = psf_tensor(&x, &c);
            let b = tensor_by_differentiation(&x, &c);
            let scale = b.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((a[i][j] - b[i][j]).abs() < 1e-6 * scale, "x={x:?} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn symmetric_jacobian_under_axis_swap() {
        // h = J G with J symmetric, so h G^-1 is symmetric.
        let c = cfg();
        let g = c.gradient_matrix;
        let x = [0.004, -0.002, 0.001];
        let h = psf_tensor(&x, &c);
        for i in 0..3 {
            for j in 0..3 {
                let a = h[i][j] / g[j][j];
                let b = h[j][i] / g[i][i];
                assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn origin_limit_is_finite() {
        let c = cfg();
        let h0 = psf_tensor(&[0.0; 3], &c);
        assert!((h0[2][2] - c.beta / 3.0 * c.gradient_matrix[2][2]).abs() < 1e-12);
        let h1 = psf_tensor(&[0.0, 0.0, 1e-8], &c);
        assert!((h1[2][2] - h0[2][2]).abs() < 1e-6 * h0[2][2]);
    }

    #[test]
    fn decays_far_away() {
        let c = cfg();
        let near = psf_tensor(&[0.0, 0.0, 0.0005], &c)[2][2];
        let far = psf_tensor(&[0.0, 0.0, 0.5], &c)[2][2];
        assert!(far.abs() < 1e-4 * near.abs());
        let far_x = psf_tensor(&[0.5, 0.0, 0.0], &c);
        assert!(far_x.iter().flatten().all(|v| v.abs() < 2e-2 * near));
    }
}
