use serde::{Deserialize, Serialize};

use super::eigen::symmetric_eigen;
use super::Kernel;
use crate::error::{Error, Result};
use crate::imgcore::{read_planes, write_planes};
use std::path::Path;

/// Upper bound on the number of sub-components.
pub const MAX_COMPONENTS: usize = 100;

/// Mean kernel plus orthonormal zero-sum PCA components.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBasis {
    principal: Kernel,
    components: Vec<Kernel>,
    eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BasisHeader {
    support: usize,
    n_components: usize,
    eigenvalues: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Remove the mean (zero-sum projection), then Gram-Schmidt against `done`.
/// Returns `None` when nothing is left.
fn orthonormalize(mut v: Vec<f64>, done: &[Vec<f64>]) -> Option<Vec<f64>> {
    let start = dot(&v, &v).sqrt();
    for _ in 0..2 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= m);
        for u in done {
            let d = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
        }
    }
    let norm = dot(&v, &v).sqrt();
    if !(norm > 1e-8 * start.max(1e-300)) || norm == 0.0 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

impl KernelBasis {
    /// Assemble a basis, re-normalizing the principal and re-orthonormalizing
    /// the components (cheap, and absorbs storage round-off).
    pub fn new(principal: Kernel, components: Vec<Kernel>, eigenvalues: Vec<f64>) -> Result<Self> {
        let s = principal.support();
        if components.len() > MAX_COMPONENTS {
            return Err(Error::InvalidArgument(format!(
                "{} components exceeds the limit of {MAX_COMPONENTS}",
                components.len()
            )));
        }
        if eigenvalues.len() != components.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} eigenvalues for {} components",
                eigenvalues.len(),
                components.len()
            )));
        }
        if components.iter().any(|c| c.support() != s) {
            return Err(Error::DimensionMismatch("components differ in support from the principal".into()));
        }
        if eigenvalues.iter().any(|&e| !(e >= 0.0)) || eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument("eigenvalues must be non-negative and non-increasing".into()));
        }
        let total = principal.sum();
        if !(total > 0.0) || principal.data().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("principal kernel must be non-negative with positive mass".into()));
        }
        let principal = Kernel::new(s, principal.data().iter().map(|v| v / total).collect())?;
        let mut done: Vec<Vec<f64>> = Vec::with_capacity(components.len());
        for c in components {
            let v = orthonormalize(c.into_data(), &done)
                .ok_or_else(|| Error::InvalidArgument("basis components are linearly dependent".into()))?;
            done.push(v);
        }
        let components = done.into_iter().map(|v| Kernel::new(s, v)).collect::<Result<_>>()?;
        Ok(Self {
            principal,
            components,
            eigenvalues,
        })
    }

    pub fn support(&self) -> usize {
        self.principal.support()
    }

    pub fn principal(&self) -> &Kernel {
        &self.principal
    }

    pub fn components(&self) -> &[Kernel] {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// The basis restricted to its first `n` components.
    pub fn truncated(&self, n: usize) -> KernelBasis {
        let n = n.min(self.components.len());
        KernelBasis {
            principal: self.principal.clone(),
            components: self.components[..n].to_vec(),
            eigenvalues: self.eigenvalues[..n].to_vec(),
        }
    }

    /// Coefficients of `k - principal` on each component.
    pub fn project(&self, k: &Kernel) -> Result<Vec<f64>> {
        if k.support() != self.support() {
            return Err(Error::DimensionMismatch(format!(
                "kernel support {} vs basis support {}",
                k.support(),
                self.support()
            )));
        }
        let centred: Vec<f64> = k.data().iter().zip(self.principal.data()).map(|(a, b)| a - b).collect();
        Ok(self.components.iter().map(|c| dot(&centred, c.data())).collect())
    }

    /// `principal + sum_k w_k comp_k`, without clamping.
    pub fn reconstruct(&self, weights: &[f64]) -> Result<Vec<f64>> {
        if weights.len() != self.components.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} components",
                weights.len(),
                self.components.len()
            )));
        }
        let mut out = self.principal.data().to_vec();
        for (w, c) in weights.iter().zip(&self.components) {
            if *w != 0.0 {
                out.iter_mut().zip(c.data()).for_each(|(o, v)| *o += w * v);
            }
        }
        Ok(out)
    }

    /// Write `basis.f32` (principal plane then component planes) and its
    /// JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = BasisHeader {
            support: self.support(),
            n_components: self.n_components(),
            eigenvalues: self.eigenvalues.clone(),
        };
        let data: Vec<f32> = std::iter::once(&self.principal)
            .chain(&self.components)
            .flat_map(|k| k.data().iter().map(|&v| v as f32))
            .collect();
        write_planes(path, &header, &data)
    }

    pub fn load(path: &Path) -> Result<KernelBasis> {
        let (h, data): (BasisHeader, Vec<f32>) = read_planes(path)?;
        let plane = h.support * h.support;
        if data.len() != plane * (h.n_components + 1) {
            return Err(Error::DimensionMismatch(format!(
                "{}: {} samples for support {} and {} components",
                path.display(),
                data.len(),
                h.support,
                h.n_components
            )));
        }
        let mut planes = data
            .chunks_exact(plane)
            .map(|c| Kernel::new(h.support, c.iter().map(|&v| v as f64).collect()));
        let principal = planes.next().expect("principal plane")?;
        let components = planes.collect::<Result<Vec<_>>>()?;
        KernelBasis::new(principal, components, h.eigenvalues)
    }
}

/// Mean kernel plus the top `n_components` eigenvectors of the centred
/// sample covariance. The ensemble must hold at least `n_components + 1`
/// kernels of one support.
pub fn build_pca_basis(ensemble: &[Kernel], n_components: usize) -> Result<KernelBasis> {
    if n_components > MAX_COMPONENTS {
        return Err(Error::InvalidArgument(format!(
            "n_components {n_components} exceeds {MAX_COMPONENTS}"
        )));
    }
    let n = ensemble.len();
    if n < n_components + 1 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "ensemble of {n} kernels is too small for {n_components} components"
        )));
    }
    let s = ensemble[0].support();
    let d = s * s;
    if n_components > d.saturating_sub(1) {
        return Err(Error::InvalidArgument(format!(
            "support {s} admits at most {} zero-sum components",
            d - 1
        )));
    }
    for k in ensemble {
        if k.support() != s {
            return Err(Error::DimensionMismatch("ensemble kernels differ in support".into()));
        }
        if (k.sum() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("ensemble kernel sums to {}, expected 1", k.sum())));
        }
    }
    let mut mean = vec![0.0; d];
    for k in ensemble {
        mean.iter_mut().zip(k.data()).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred: Vec<Vec<f64>> = ensemble
        .iter()
        .map(|k| k.data().iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let denom = (n.max(2) - 1) as f64;
    let total_var: f64 = centred.iter().map(|c| dot(c, c)).sum::<f64>() / denom;
    let mean_sq = dot(&mean, &mean);
    if n_components > 0 && !(total_var > 1e-20 * mean_sq) {
        return Err(Error::ZeroVariance);
    }
    let principal = Kernel::new(s, mean)?;
    if n_components == 0 {
        return KernelBasis::new(principal, Vec::new(), Vec::new());
    }

    let (values, vectors): (Vec<f64>, Vec<Vec<f64>>) = if n < d {
        // Gram-matrix trick: eigenvectors of X X^T map to those of X^T X
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = dot(&centred[i], &centred[j]) / denom;
                g[i * n + j] = v;
                g[j * n + i] = v;
            }
        }
        let (vals, us) = symmetric_eigen(&g, n)?;
        let vecs = us
            .iter()
            .map(|u| {
                let mut v = vec![0.0; d];
                for (ui, c) in u.iter().zip(&centred) {
                    v.iter_mut().zip(c).for_each(|(a, b)| *a += ui * b);
                }
                v
            })
            .collect();
        (vals, vecs)
    } else {
        // covariance with the all-ones direction pushed to eigenvalue -1 so
        // every kept eigenvector is zero-sum
        let mut c = vec![0.0; d * d];
        for x in &centred {
            for i in 0..d {
                if x[i] == 0.0 {
                    continue;
                }
                let row = &mut c[i * d..(i + 1) * d];
                row.iter_mut().zip(x).for_each(|(r, v)| *r += x[i] * v);
            }
        }
        c.iter_mut().for_each(|v| *v = *v / denom - 1.0 / d as f64);
        symmetric_eigen(&c, d)?
    };

    let floor = 1e-12 * values.first().copied().unwrap_or(0.0).max(0.0);
    let mut comps: Vec<Vec<f64>> = Vec::with_capacity(n_components);
    let mut eig = Vec::with_capacity(n_components);
    for (val, vec) in values.into_iter().zip(vectors) {
        if comps.len() == n_components || val <= floor {
            break;
        }
        if let Some(v) = orthonormalize(vec, &comps) {
            comps.push(v);
            eig.push(val.max(0.0));
        }
    }
    // complete a rank-deficient ensemble with zero-variance directions
    let mut e = 0;
    while comps.len() < n_components && e < d {
        let mut v = vec![0.0; d];
        v[e] = 1.0;
        if let Some(v) = orthonormalize(v, &comps) {
            comps.push(v);
            eig.push(0.0);
        }
        e += 1;
    }
    let components = comps.into_iter().map(|v| Kernel::new(s, v)).collect::<Result<_>>()?;
    KernelBasis::new(principal, components, eig)
}

/// `principal + sum_k w_k comp_k`, clamped at zero and renormalized to unit
/// sum. Weights of any sign are accepted.
pub fn compose_kernel(basis: &KernelBasis, weights: &[f64]) -> Result<Kernel> {
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidArgument("kernel weights must be finite".into()));
    }
    let mut k = basis.reconstruct(weights)?;
    k.iter_mut().for_each(|v| *v = v.max(0.0));
    let s: f64 = k.iter().sum();
    if !(s > 0.0) {
        return Err(Error::Numerical("composed kernel has no positive mass".into()));
    }
    k.iter_mut().for_each(|v| *v /= s);
    Kernel::new(basis.support(), k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k3(v: [f64; 9]) -> Kernel {
        Kernel::new(3, v.to_vec()).unwrap()
    }

    #[test]
    fn two_sample_closed_form() {
        let a = k3([0.0, 0.1, 0.0, 0.1, 0.6, 0.1, 0.0, 0.1, 0.0]);
        let b = k3([0.05, 0.1, 0.05, 0.1, 0.4, 0.1, 0.05, 0.1, 0.05]);
        let basis = build_pca_basis(&[a.clone(), b.clone()], 1).unwrap();
        for i in 0..9 {
            assert!((basis.principal().data()[i] - 0.5 * (a.data()[i] + b.data()[i])).abs() < 1e-15);
        }
        let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let norm = dot(&diff, &diff).sqrt();
        let c = basis.components()[0].data();
        let sign = dot(c, &diff).signum();
        for i in 0..9 {
            assert!((c[i] * sign - diff[i] / norm).abs() < 1e-12);
        }
        let w = basis.project(&a).unwrap();
        let rec = basis.reconstruct(&w).unwrap();
        let err: f64 = rec.iter().zip(a.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-9);
    }

    #[test]
    fn identical_ensemble_has_zero_variance() {
        let a = Kernel::delta(3).unwrap();
        let r = build_pca_basis(&[a.clone(), a.clone(), a.clone()], 1);
        assert!(matches!(r, Err(Error::ZeroVariance)));
        assert!(build_pca_basis(&[a.clone(), a], 0).is_ok());
    }

    #[test]
    fn zero_weights_give_the_principal() {
        let a = k3([0.0, 0.1, 0.0, 0.1, 0.6, 0.1, 0.0, 0.1, 0.0]);
        let b = k3([0.1, 0.1, 0.1, 0.1, 0.2, 0.1, 0.1, 0.1, 0.1]);
        let basis = build_pca_basis(&[a, b], 1).unwrap();
        assert_eq!(compose_kernel(&basis, &[0.0]).unwrap(), *basis.principal());
        assert!(compose_kernel(&basis, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn rank_deficient_ensemble_is_completed() {
        let a = k3([0.0, 0.1, 0.0, 0.1, 0.6, 0.1, 0.0, 0.1, 0.0]);
        let b = k3([0.1, 0.1, 0.1, 0.1, 0.2, 0.1, 0.1, 0.1, 0.1]);
        let basis = build_pca_basis(&[a.clone(), b.clone(), a, b], 3).unwrap();
        assert_eq!(basis.n_components(), 3);
        assert!(basis.eigenvalues()[0] > 0.0);
        assert_eq!(&basis.eigenvalues()[1..], &[0.0, 0.0]);
        for i in 0..3 {
            assert!(basis.components()[i].sum().abs() < 1e-12);
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((basis.components()[i].dot(&basis.components()[j]) - want).abs() < 1e-12);
            }
        }
    }
}
