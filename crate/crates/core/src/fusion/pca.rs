/// Two-component PCA of embedding tokens grouped by frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaResult {
    /// `coords[frame][token]`.
    pub coords: Vec<Vec<[f64; 2]>>,
    /// Unit principal axes, largest variance first.
    pub axes: [Vec<f64>; 2],
    /// Between-frame variance over total variance of the projections, in `[0, 1]`.
    pub separation: f64,
    /// Set when the tokens have (numerically) zero variance.
    pub degenerate: bool,
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues descending with matching unit eigenvectors.
pub fn symmetric_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in m.iter_mut() {
                    let (mkp, mkq) = (row[p], row[q]);
                    row[p] = c * mkp - s * mkq;
                    row[q] = s * mkp + c * mkq;
                }
                let (rp, rq) = (m[p].clone(), m[q].clone());
                for (k, (mpk, mqk)) in rp.into_iter().zip(rq).enumerate() {
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order.iter().map(|&i| canonical_sign((0..n).map(|k| v[k][i]).collect())).collect();
    (values, vectors)
}

/// Flips `v` so that its largest-magnitude component is positive.
pub fn canonical_sign(mut v: Vec<f64>) -> Vec<f64> {
    let idx = (0..v.len()).max_by(|&a, &b| v[a].abs().partial_cmp(&v[b].abs()).unwrap()).unwrap_or(0);
    if v.get(idx).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// Projects every token onto the first two principal components of the
/// pooled, mean-centred token set and scores how well frames separate.
pub fn pca_embeddings(frames: &[Vec<Vec<f64>>]) -> PcaResult {
    let d = frames.iter().flatten().next().map_or(0, |t| t.len());
    let all: Vec<&Vec<f64>> = frames.iter().flatten().collect();
    let n = all.len().max(1) as f64;
    let mean: Vec<f64> = (0..d).map(|k| all.iter().map(|t| t[k]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for t in &all {
        for i in 0..d {
            let di = t[i] - mean[i];
            for j in 0..d {
                cov[i][j] += di * (t[j] - mean[j]) / n;
            }
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i][i]).sum();
    let zero = PcaResult {
        coords: frames.iter().map(|f| vec![[0.0; 2]; f.len()]).collect(),
        axes: [vec![0.0; d], vec![0.0; d]],
        separation: 0.0,
        degenerate: true,
    };
    if d == 0 || trace <= 1e-24 {
        return zero;
    }
    let (_, vecs) = symmetric_eigen(&cov);
    let axis = |i: usize| vecs.get(i).cloned().unwrap_or_else(|| vec![0.0; d]);
    let axes = [axis(0), axis(1)];
    let project = |t: &Vec<f64>| -> [f64; 2] {
        let c: Vec<f64> = t.iter().zip(&mean).map(|(a, m)| a - m).collect();
        [0, 1].map(|i| c.iter().zip(&axes[i]).map(|(a, b)| a * b).sum())
    };
    let coords: Vec<Vec<[f64; 2]>> = frames.iter().map(|f| f.iter().map(project).collect()).collect();

    // projections are centred, so total = between + within
    let (mut between, mut within) = (0.0, 0.0);
    for f in &coords {
        if f.is_empty() {
            continue;
        }
        let m = f.len() as f64;
        let mu = [0, 1].map(|i| f.iter().map(|c| c[i]).sum::<f64>() / m);
        between += m * (mu[0] * mu[0] + mu[1] * mu[1]);
        within += f.iter().map(|c| (c[0] - mu[0]).powi(2) + (c[1] - mu[1]).powi(2)).sum::<f64>();
    }
    let total = between + within;
    let separation = if total > 0.0 { between / total } else { 0.0 };
    PcaResult { coords, axes, separation, degenerate: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_frames_do_not_separate() {
        let f = vec![vec![1.0, 2.0, 0.0], vec![0.0, 1.0, 3.0], vec![2.0, 2.0, 2.0]];
        let r = pca_embeddings(&[f.clone(), f]);
        assert!(!r.degenerate);
        assert!(r.separation.abs() < 1e-12);
    }

    #[test]
    fn constant_clusters_separate_fully() {
        let a = vec![vec![1.0, 0.0, 0.0]; 4];
        let b = vec![vec![0.0, 1.0, 0.0]; 4];
        let r = pca_embeddings(&[a, b]);
        assert!((r.separation - 1.0).abs() < 1e-12);
        let diff = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt(), 0.0];
        let cos: f64 = r.axes[0].iter().zip(diff).map(|(x, y)| x * y).sum();
        assert!((cos.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_equal_tokens_are_degenerate() {
        let a = vec![vec![0.5, 0.5]; 3];
        let r = pca_embeddings(&[a.clone(), a]);
        assert!(r.degenerate);
        assert!(r.coords.iter().flatten().all(|c| *c == [0.0, 0.0]));
    }
}
