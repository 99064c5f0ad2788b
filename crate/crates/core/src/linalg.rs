//! Dense linear-algebra kernels shared by the analysis and certification layers.
//!
//! Everything here works on `nalgebra` dynamic matrices. Target sizes are small
//! (tens to a few hundred rows), so all routines are dense and direct.

use nalgebra::{Complex, DMatrix, DVector, Schur};

use crate::error::{Error, Result};

pub type Complex64 = Complex<f64>;

/// Iteration cap per row for the real Schur QR sweep.
const SCHUR_ITERS_PER_ROW: usize = 400;

/// Constant inside the Jordan-cluster radius `scale * (C * eps)^(1/m)`.
const CLUSTER_SLACK: f64 = 1.0e3;

/// Largest Jordan block the cluster refinement will recognise.
const MAX_DEFECT: usize = 8;

/// Relative bound on `sigma_min(M - mean I)` for a merged cluster.
const SINGULAR_TOL: f64 = 1.0e-7;

/// Computes the spectrum of a general real square matrix.
///
/// Eigenvalues of a defective (Jordan) block are ill-conditioned: a block of
/// size `m` scatters into a ring of radius `~eps^(1/m)` around the true value,
/// while the *mean* of that ring stays accurate to working precision. Tight
/// clusters whose diameter matches that scatter are therefore replaced by
/// their mean. The result is sorted by real part, descending.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let raw = raw_eigenvalues(m)?;
    let scale = m.norm().max(1.0);
    let mut eigs = merge_defective_clusters(m, &raw, scale);
    sort_spectrum(&mut eigs);
    Ok(eigs)
}

/// Eigenvalues straight from the real Schur form, without cluster refinement.
pub fn raw_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "eigenvalues of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(
            "eigensolve",
            "matrix has non-finite entries",
        ));
    }
    let (_, t) = real_schur(m)
        .or_else(|| real_schur(&m.transpose()))
        .ok_or_else(|| Error::numeric("eigensolve", "real Schur iteration did not converge"))?;
    Ok(quasi_triangular_blocks(&t)
        .into_iter()
        .flat_map(|(i, k)| block_eigenvalues(&t, i, k))
        .collect())
}

/// Real Schur form `M = Q T Qᵀ`.
///
/// The shifted QR iteration has no exceptional shifts and can cycle on highly
/// structured integer matrices. On failure it is rerun on orthogonally similar
/// matrices, whose factors map back exactly.
fn real_schur(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    let max_iter = SCHUR_ITERS_PER_ROW * n.max(4);
    let reversal = DMatrix::from_fn(n, n, |i, j| if i + j == n - 1 { 1.0 } else { 0.0 });
    let v = DVector::from_fn(n, |i, _| (i + 1) as f64);
    let householder = DMatrix::identity(n, n) - (&v * v.transpose()) * (2.0 / v.norm_squared());
    for u in [DMatrix::identity(n, n), reversal, householder] {
        let similar = u.transpose() * m * &u;
        if let Some(schur) = Schur::try_new(similar, f64::EPSILON, max_iter) {
            let (q, t) = schur.unpack();
            return Some((u * q, t));
        }
    }
    None
}

fn block_eigenvalues(t: &DMatrix<f64>, i: usize, k: usize) -> Vec<Complex64> {
    if k == 1 {
        return vec![Complex64::new(t[(i, i)], 0.0)];
    }
    let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
    let half_tr = 0.5 * (a + d);
    let disc = 0.25 * (a - d) * (a - d) + b * c;
    if disc >= 0.0 {
        let r = disc.sqrt();
        vec![
            Complex64::new(half_tr + r, 0.0),
            Complex64::new(half_tr - r, 0.0),
        ]
    } else {
        let r = (-disc).sqrt();
        vec![Complex64::new(half_tr, r), Complex64::new(half_tr, -r)]
    }
}

/// Maximum real part over the full spectrum.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> Result<f64> {
    let eigs = eigenvalues(m)?;
    Ok(eigs.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

fn sort_spectrum(eigs: &mut [Complex64]) {
    eigs.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
}

fn cluster_radius(size: usize, scale: f64) -> f64 {
    scale * (CLUSTER_SLACK * f64::EPSILON).powf(1.0 / size as f64)
}

fn merge_defective_clusters(m: &DMatrix<f64>, points: &[Complex64], scale: f64) -> Vec<Complex64> {
    let idx: Vec<usize> = (0..points.len()).collect();
    let mut out = Vec::with_capacity(points.len());
    let ctx = ClusterCtx { m, points, scale };
    split_cluster(&ctx, &idx, points.len().clamp(1, MAX_DEFECT), &mut out);
    out
}

struct ClusterCtx<'a> {
    m: &'a DMatrix<f64>,
    points: &'a [Complex64],
    scale: f64,
}

/// True when `mean` is numerically an eigenvalue of `m`.
fn is_near_eigenvalue(m: &DMatrix<f64>, mean: Complex64, scale: f64) -> bool {
    let n = m.nrows();
    let shifted = DMatrix::from_fn(n, n, |i, j| {
        let v = Complex64::new(m[(i, j)], 0.0);
        if i == j {
            v - mean
        } else {
            v
        }
    });
    shifted
        .singular_values()
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
        <= SINGULAR_TOL * scale
}

/// Recursive single-linkage split: a group is accepted as one defective
/// eigenvalue only if its diameter fits the scatter radius for its size and
/// its mean is itself an eigenvalue.
fn split_cluster(ctx: &ClusterCtx, members: &[usize], level: usize, out: &mut Vec<Complex64>) {
    let (points, scale) = (ctx.points, ctx.scale);
    let radius = cluster_radius(level.max(1), scale);
    for group in single_linkage(points, members, radius) {
        if group.len() == 1 {
            out.push(points[group[0]]);
            continue;
        }
        let diameter = group
            .iter()
            .flat_map(|&a| group.iter().map(move |&b| (points[a] - points[b]).norm()))
            .fold(0.0, f64::max);
        let n = group.len() as f64;
        let mut mean = group.iter().map(|&i| points[i]).sum::<Complex64>() / n;
        let self_conjugate = group.iter().all(|&i| {
            group
                .iter()
                .any(|&j| (points[j] - points[i].conj()).norm() <= f64::EPSILON * scale * 8.0)
        });
        if self_conjugate {
            mean.im = 0.0;
        }
        if group.len() <= MAX_DEFECT
            && diameter <= 2.0 * cluster_radius(group.len(), scale)
            && is_near_eigenvalue(ctx.m, mean, scale)
        {
            out.extend(std::iter::repeat_n(mean, group.len()));
        } else if level <= 1 {
            out.extend(group.iter().map(|&i| points[i]));
        } else {
            split_cluster(ctx, &group, group.len().min(level) - 1, out);
        }
    }
}

fn single_linkage(points: &[Complex64], members: &[usize], radius: f64) -> Vec<Vec<usize>> {
    let n = members.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for a in 0..n {
        for b in (a + 1)..n {
            if (points[members[a]] - points[members[b]]).norm() <= radius {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra] = rb;
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; n];
    for (a, &member) in members.iter().enumerate() {
        let r = find(&mut parent, a);
        if root_slot[r] == usize::MAX {
            root_slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_slot[r]].push(member);
    }
    groups
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s != 0.0 {
                out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * s));
            }
        }
    }
    out
}

/// Kronecker sum `F ⊗ I_r + I_n ⊗ G`.
pub fn kron_sum(f: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = f.nrows();
    let r = g.nrows();
    kron(f, &DMatrix::identity(r, r)) + kron(&DMatrix::identity(n, n), g)
}

/// Extreme eigenvalues `(λ_min, λ_max)` of a symmetric matrix.
pub fn symmetric_extremes(p: &DMatrix<f64>) -> (f64, f64) {
    let eig = p.clone().symmetric_eigenvalues();
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Induced 2-norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Matrix exponential (Padé scaling and squaring).
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.exp()
}

/// Solves the continuous Lyapunov equation `Mᵀ X + X M = C` by Bartels–Stewart.
///
/// With the real Schur form `M = Q T Qᵀ` the equation becomes
/// `Tᵀ Y + Y T = Qᵀ C Q`, solved block by block (1x1 and 2x2 diagonal blocks
/// of the quasi-triangular `T`), then `X = Q Y Qᵀ`. Fails when `M` and `-M`
/// share an eigenvalue (no unique solution).
pub fn solve_lyapunov(m: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if !m.is_square() || c.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "lyapunov: M is {:?}, C is {:?}",
            m.shape(),
            c.shape()
        )));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let (q, t) = real_schur(m)
        .ok_or_else(|| Error::numeric("lyapunov", "real Schur iteration did not converge"))?;
    let f = q.transpose() * c * &q;

    let blocks = quasi_triangular_blocks(&t);
    let mut y = DMatrix::<f64>::zeros(n, n);
    for &(cj, nj) in &blocks {
        for &(ri, ni) in &blocks {
            let mut rhs = f.view((ri, cj), (ni, nj)).clone_owned();
            for &(rk, nk) in blocks.iter().take_while(|(s, _)| *s < ri) {
                let t_ki = t.view((rk, ri), (nk, ni));
                rhs -= t_ki.transpose() * y.view((rk, cj), (nk, nj));
            }
            for &(cl, nl) in blocks.iter().take_while(|(s, _)| *s < cj) {
                let t_lj = t.view((cl, cj), (nl, nj));
                rhs -= y.view((ri, cl), (ni, nl)) * t_lj;
            }
            let t_ii = t.view((ri, ri), (ni, ni)).clone_owned();
            let t_jj = t.view((cj, cj), (nj, nj)).clone_owned();
            // vec(Tiiᵀ Y + Y Tjj) = (I ⊗ Tiiᵀ + Tjjᵀ ⊗ I) vec(Y)
            let sys = kron(&DMatrix::identity(nj, nj), &t_ii.transpose())
                + kron(&t_jj.transpose(), &DMatrix::identity(ni, ni));
            let vec_rhs = DVector::from_column_slice(rhs.as_slice());
            let sol = sys.lu().solve(&vec_rhs).ok_or_else(|| {
                Error::numeric(
                    "lyapunov",
                    "singular block system: M and -M share an eigenvalue",
                )
            })?;
            y.view_mut((ri, cj), (ni, nj))
                .copy_from_slice(sol.as_slice());
        }
    }
    let x = &q * y * q.transpose();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("lyapunov", "non-finite solution"));
    }
    Ok(x)
}

/// `(start, size)` of each diagonal block of a real quasi-upper-triangular matrix.
fn quasi_triangular_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut k = 0;
    while k < n {
        if k + 1 < n && t[(k + 1, k)] != 0.0 {
            blocks.push((k, 2));
            k += 2;
        } else {
            blocks.push((k, 1));
            k += 1;
        }
    }
    blocks
}

/// Smallest achievable maximum pairwise distance over all perfect matchings
/// between two equally sized point sets (bottleneck assignment).
pub fn bottleneck_match(a: &[Complex64], b: &[Complex64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let n = a.len();
    if n == 0 {
        return Some(0.0);
    }
    let dist: Vec<Vec<f64>> = a
        .iter()
        .map(|x| b.iter().map(|y| (x - y).norm()).collect())
        .collect();
    let mut levels: Vec<f64> = dist.iter().flatten().copied().collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();

    let (mut lo, mut hi) = (0usize, levels.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if has_perfect_matching(&dist, levels[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(levels[lo])
}

fn has_perfect_matching(dist: &[Vec<f64>], threshold: f64) -> bool {
    let n = dist.len();
    let mut match_of_b = vec![usize::MAX; n];
    fn augment(
        u: usize,
        dist: &[Vec<f64>],
        threshold: f64,
        seen: &mut [bool],
        match_of_b: &mut [usize],
    ) -> bool {
        for v in 0..dist.len() {
            if dist[u][v] <= threshold && !seen[v] {
                seen[v] = true;
                if match_of_b[v] == usize::MAX
                    || augment(match_of_b[v], dist, threshold, seen, match_of_b)
                {
                    match_of_b[v] = u;
                    return true;
                }
            }
        }
        false
    }
    (0..n).all(|u| {
        let mut seen = vec![false; n];
        augment(u, dist, threshold, &mut seen, &mut match_of_b)
    })
}
