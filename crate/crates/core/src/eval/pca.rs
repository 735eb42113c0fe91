use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::datasets::DomainTag;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Two leading principal components.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca2d {
    /// `n × 2` projected coordinates.
    pub coords: Matrix,
    /// Variance along each component, descending.
    pub variances: [f64; 2],
    /// Unit eigenvectors as rows (`2 × d`); a missing component is all zeros.
    pub components: Matrix,
}

/// Projection onto the top two eigenvectors of the feature covariance. Each
/// eigenvector's sign is fixed so that its largest-magnitude entry is
/// positive. Components beyond the data's rank come out as zero columns.
pub fn pca_2d(features: &Matrix) -> Result<Pca2d> {
    let (n, d) = features.shape();
    if n == 0 || d == 0 {
        return Err(Error::Data("PCA of an empty feature matrix".into()));
    }
    let mean = features.column_means();
    let centered = DMatrix::from_fn(n, d, |i, j| features.get(i, j) - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = 1e-12 * top.max(f64::MIN_POSITIVE);

    let mut components = Matrix::zeros(2, d);
    let mut variances = [0.0; 2];
    for (slot, &k) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[k];
        if lambda <= tol {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        let pivot = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components.set(slot, j, sign * v[j]);
        }
        variances[slot] = lambda;
    }
    let mut coords = Matrix::zeros(n, 2);
    for i in 0..n {
        for c in 0..2 {
            let s: f64 = (0..d).map(|j| centered[(i, j)] * components.get(c, j)).sum();
            coords.set(i, c, s);
        }
    }
    Ok(Pca2d {
        coords,
        variances,
        components,
    })
}

/// Writes `x,y,class,domain` rows; an unknown class is left blank.
pub fn write_embedding_csv(
    coords: &Matrix,
    labels: &[Option<usize>],
    domains: &[DomainTag],
    path: impl AsRef<Path>,
) -> Result<()> {
    let n = coords.rows();
    if labels.len() != n || domains.len() != n {
        return Err(Error::dim(
            "write_embedding_csv",
            n,
            format!("{} labels / {} domains", labels.len(), domains.len()),
        ));
    }
    let mut out = String::from("x,y,class,domain\n");
    for i in 0..n {
        let class = labels[i].map(|c| c.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", coords.get(i, 0), coords.get(i, 1), class, domains[i].as_str());
    }
    let path = path.as_ref();
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// PCA to two dimensions followed by [`write_embedding_csv`].
pub fn export_embedding_2d(
    features: &Matrix,
    labels: &[Option<usize>],
    domains: &[DomainTag],
    path: impl AsRef<Path>,
) -> Result<Pca2d> {
    let pca = pca_2d(features)?;
    write_embedding_csv(&pca.coords, labels, domains, path)?;
    Ok(pca)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn dist(m: &Matrix, a: usize, b: usize) -> f64 {
        let (x, y) = (m.row(a), m.row(b));
        x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn two_dimensional_input_is_rotated_only() {
        let mut rng = Rng::new(11);
        let data: Vec<f64> = (0..200).map(|_| rng.normal()).collect();
        let x = Matrix::from_vec(100, 2, data).unwrap();
        let p = pca_2d(&x).unwrap();
        for (a, b) in [(0, 1), (5, 77), (40, 99)] {
            assert!((dist(&x, a, b) - dist(&p.coords, a, b)).abs() < 1e-9);
        }
        assert!(p.variances[0] >= p.variances[1]);
    }

    #[test]
    fn rank_one_pads_second_axis() {
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [3.0, 6.0, 9.0]]).unwrap();
        let p = pca_2d(&x).unwrap();
        assert!(p.coords.as_slice().chunks(2).all(|r| r[1] == 0.0));
        assert_eq!(p.variances[1], 0.0);
        let one_col = Matrix::from_rows(&[[1.0], [3.0]]).unwrap();
        let q = pca_2d(&one_col).unwrap();
        assert_eq!(q.coords.shape(), (2, 2));
        assert_eq!((q.coords.get(0, 0), q.coords.get(1, 0)), (-1.0, 1.0));
    }

    #[test]
    fn csv_rows_match_input_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        let x = Matrix::from_rows(&[[0.0, 1.0, 0.0], [1.0, 0.0, 2.0], [0.5, 0.5, 1.0]]).unwrap();
        let labels = [Some(0), Some(1), None];
        let domains = [DomainTag::Source, DomainTag::Source, DomainTag::Target];
        export_embedding_2d(&x, &labels, &domains, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,y,class,domain");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].ends_with(",,target"));
        assert!(export_embedding_2d(&x, &labels[..2], &domains, &path).is_err());
    }
}
