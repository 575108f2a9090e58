//! The linear-algebra side: singular values, the inverse-entry bound and the
//! product inequality on a few random witness matrices.

use cakecut::linalg::{determinant, invert, singular_values, smallest_singular_value, sigma_query_bound};
use cakecut::models::{sample, ModelConfig};
use cakecut::SeedPath;

fn main() -> cakecut::Result<()> {
    for n in [3, 10, 30] {
        let rec = sample(&ModelConfig::h1(n), SeedPath::new(1, n as u64))?;
        let sv = singular_values(&rec.m)?;
        let sigma = *sv.last().unwrap();
        let inv = invert(&rec.m)?;
        let prod: f64 = sv.iter().product();
        let sd = rec.d_diagonal().into_iter().fold(f64::INFINITY, f64::min);
        let sx = smallest_singular_value(&rec.x)?;
        println!("n = {n}");
        println!("  sigma_1 = {:.4}, sigma_n = {sigma:.4e}", sv[0]);
        println!("  prod sigma = {prod:.6e}, |det| = {:.6e}", determinant(&rec.m).abs());
        println!("  max |inverse entry| = {:.4e} <= 1/sigma_n = {:.4e}", inv.max_abs(), 1.0 / sigma);
        println!("  sigma_n(D) sigma_n(X) = {:.4e} <= sigma_n(M) = {sigma:.4e}", sd * sx);
        let bound = sigma_query_bound(n, sigma)?;
        println!("  n^7 max(1, 1/sigma_n) = {:.3e} (established range: {})", bound.value, bound.n_in_range);
    }
    Ok(())
}
