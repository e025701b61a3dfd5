use nalgebra::{DMatrix, RowDVector};

use super::LatentDraws;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const SWEEP_TOL: f64 = 1e-12;

/// Generalized Procrustes alignment: every draw is rotated (reflections
/// allowed) and translated onto the first draw, then repeatedly onto the
/// running mean until the spread stops shrinking.
///
/// Rigid motions only, so within-draw pairwise distances are preserved.
pub fn procrustes_align(draws: &LatentDraws) -> Result<LatentDraws> {
    for (k, u) in draws.draws().iter().enumerate() {
        if column_variance(u).iter().all(|&v| v == 0.0) {
            return Err(Error::RankDeficient { draw: k });
        }
    }
    let original = draws.draws().to_vec();
    let before = spread(&original);

    let reference = original[0].clone();
    let mut current: Vec<DMatrix<f64>> =
        original.iter().map(|u| align_to(u, &reference)).collect();
    let mut obj = spread(&current);
    for _ in 0..MAX_SWEEPS {
        let mean = mean_of(&current);
        let next: Vec<DMatrix<f64>> = current.iter().map(|u| align_to(u, &mean)).collect();
        let next_obj = spread(&next);
        let done = obj - next_obj <= SWEEP_TOL * obj.max(f64::MIN_POSITIVE);
        if next_obj <= obj {
            current = next;
            obj = next_obj;
        }
        if done {
            break;
        }
    }
    if obj > before {
        // alignment never made things worse than leaving the draws alone
        current = original;
    }
    Ok(draws.clone().into_aligned(current))
}

/// Sum over draws of the squared Frobenius distance to the mean draw.
pub fn alignment_spread(draws: &LatentDraws) -> f64 {
    spread(draws.draws())
}

fn spread(draws: &[DMatrix<f64>]) -> f64 {
    let mean = mean_of(draws);
    draws.iter().map(|u| (u - &mean).norm_squared()).sum()
}

fn mean_of(draws: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(draws[0].nrows(), draws[0].ncols());
    for u in draws {
        m += u;
    }
    m / draws.len() as f64
}

fn centroid(u: &DMatrix<f64>) -> RowDVector<f64> {
    u.row_mean()
}

fn column_variance(u: &DMatrix<f64>) -> Vec<f64> {
    let c = centroid(u);
    (0..u.ncols())
        .map(|j| u.column(j).iter().map(|v| (v - c[j]).powi(2)).sum())
        .collect()
}

fn subtract_row(u: &DMatrix<f64>, r: &RowDVector<f64>) -> DMatrix<f64> {
    let mut out = u.clone();
    for mut row in out.row_iter_mut() {
        row -= r;
    }
    out
}

/// Orthogonal `R` and translation minimizing `||(u - 1c_u) R + 1c_ref - ref||`.
fn align_to(u: &DMatrix<f64>, reference: &DMatrix<f64>) -> DMatrix<f64> {
    let cu = centroid(u);
    let cr = centroid(reference);
    let x = subtract_row(u, &cu);
    let y = subtract_row(reference, &cr);
    let svd = (x.transpose() * &y).svd(true, true);
    let r = svd.u.expect("requested U") * svd.v_t.expect("requested Vt");
    let mut out = x * r;
    for mut row in out.row_iter_mut() {
        row += &cr;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rotation3(a: f64, b: f64) -> DMatrix<f64> {
        let rz = DMatrix::from_row_slice(3, 3, &[a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0]);
        let rx = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, b.cos(), -b.sin(), 0.0, b.sin(), b.cos()]);
        rz * rx
    }

    fn random(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| rng.gen_range(-2.0..2.0))
    }

    fn distances(u: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(u.nrows(), u.nrows(), |i, j| (u.row(i) - u.row(j)).norm())
    }

    #[test]
    fn recovers_rigidly_moved_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u0 = random(10, 3, &mut rng);
        let mut draws = vec![u0.clone()];
        for k in 1..6 {
            let r = rotation3(0.4 * k as f64, -0.3 * k as f64);
            let mut moved = &u0 * r;
            let shift = RowDVector::from_row_slice(&[k as f64, -2.0, 0.5 * k as f64]);
            for mut row in moved.row_iter_mut() {
                row += &shift;
            }
            draws.push(moved);
        }
        // a reflected copy too
        let mut reflected = u0.clone();
        reflected.column_mut(1).neg_mut();
        draws.push(reflected);
        let aligned = procrustes_align(&LatentDraws::new(draws).unwrap()).unwrap();
        assert!(aligned.aligned());
        for u in aligned.draws() {
            assert!((u - &u0).norm() < 1e-8, "{}", (u - &u0).norm());
        }
    }

    #[test]
    fn identical_draws_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random(6, 2, &mut rng);
        let aligned = procrustes_align(&LatentDraws::new(vec![u.clone(); 4]).unwrap()).unwrap();
        for v in aligned.draws() {
            assert!((v - &u).norm() < 1e-12);
        }
    }

    #[test]
    fn preserves_distances_and_reduces_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<_> = (0..20).map(|_| random(8, 3, &mut rng)).collect();
        let ld = LatentDraws::new(draws.clone()).unwrap();
        let aligned = procrustes_align(&ld).unwrap();
        assert!(alignment_spread(&aligned) <= alignment_spread(&ld));
        for (a, b) in draws.iter().zip(aligned.draws()) {
            assert!((distances(a) - distances(b)).amax() < 1e-10);
        }
    }

    #[test]
    fn rejects_collapsed_draw() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let good = random(5, 2, &mut rng);
        let flat = DMatrix::from_element(5, 2, 1.5);
        let err = procrustes_align(&LatentDraws::new(vec![good, flat]).unwrap()).unwrap_err();
        assert_eq!(err, Error::RankDeficient { draw: 1 });
    }
}
