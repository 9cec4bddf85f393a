//! Intrinsic geometry of the unit hypersphere: geodesic distance, tangent
//! projections, exponential map, parallel transport, and the angular chart.
//!
//! All operations are pure; points are represented extrinsically as unit-norm
//! vectors in the ambient space.

use crate::error::{CoreError, Result};

/// Default epsilon for the normalization operator.
pub const NORM_EPS: f64 = 1e-12;

/// Inner products are clamped to this band before `acos`, bounding the
/// `1/sqrt(1-x^2)` derivative that the losses differentiate through.
pub const ACOS_CLAMP: f64 = 1e-7;

/// A point on the unit hypersphere.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector {
    coords: Vec<f64>,
}

impl UnitVector {
    /// Wraps a vector already known to be unit norm. Checked in debug builds.
    pub fn from_normalized(coords: Vec<f64>) -> Self {
        debug_assert!(coords.len() >= 2);
        debug_assert!((norm(&coords) - 1.0).abs() <= 1e-6, "norm drift");
        UnitVector { coords }
    }

    /// Standard basis vector `e_axis` in dimension `d`.
    pub fn basis(d: usize, axis: usize) -> Self {
        assert!(d >= 2 && axis < d);
        let mut coords = vec![0.0; d];
        coords[axis] = 1.0;
        UnitVector { coords }
    }

    /// North pole `e_d = [0, ..., 0, 1]`.
    pub fn north_pole(d: usize) -> Self {
        Self::basis(d, d - 1)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.coords
    }

    /// Last ambient coordinate, the polar component relative to `e_d`.
    pub fn polar_component(&self) -> f64 {
        *self.coords.last().unwrap()
    }
}

/// A tangent vector anchored at a point of the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    base: UnitVector,
    direction: Vec<f64>,
}

impl TangentVector {
    /// Wraps a direction already orthogonal to `base`. Checked in debug builds.
    pub fn from_parts(base: UnitVector, direction: Vec<f64>) -> Self {
        debug_assert_eq!(base.dim(), direction.len());
        // Relative tolerance: a tangent direction scaled by a large factor
        // amplifies the roundoff in the inner product by the same factor.
        debug_assert!(
            dot(base.as_slice(), &direction).abs() <= 1e-6 * (1.0 + norm(&direction)),
            "not tangent"
        );
        TangentVector { base, direction }
    }

    pub fn zero(base: UnitVector) -> Self {
        let d = base.dim();
        TangentVector {
            base,
            direction: vec![0.0; d],
        }
    }

    pub fn base(&self) -> &UnitVector {
        &self.base
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn norm(&self) -> f64 {
        norm(&self.direction)
    }

    pub fn scale(&self, s: f64) -> Self {
        TangentVector {
            base: self.base.clone(),
            direction: self.direction.iter().map(|x| x * s).collect(),
        }
    }
}

/// Angular coordinates `(psi_1..psi_{d-2}, theta)` of a point off the
/// singular set.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularCoords {
    pub latitudes: Vec<f64>,
    pub longitude: f64,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(CoreError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `phi(x) = x / (||x|| + eps)`, the differentiable projection onto the sphere.
pub fn normalize(x: &[f64], eps: f64) -> Result<UnitVector> {
    if x.len() < 2 {
        return Err(CoreError::DimensionMismatch {
            expected: 2,
            got: x.len(),
        });
    }
    let n = norm(x);
    if n < 1e-9 {
        return Err(CoreError::DegenerateVector);
    }
    let inv = 1.0 / (n + eps);
    Ok(UnitVector::from_normalized(
        x.iter().map(|v| v * inv).collect(),
    ))
}

/// Clamp an inner product into the safe `acos` band.
pub fn clamp_cosine(x: f64) -> f64 {
    x.clamp(-1.0 + ACOS_CLAMP, 1.0 - ACOS_CLAMP)
}

/// Great-circle arc length `arccos(<a, b>)` in `[0, pi]`.
pub fn geodesic_distance(a: &UnitVector, b: &UnitVector) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok(clamp_cosine(dot(a.as_slice(), b.as_slice())).acos())
}

/// `proj_base(x) = x - <x, base> base`.
pub fn project_to_tangent(base: &UnitVector, x: &[f64]) -> Result<TangentVector> {
    check_dims(base.dim(), x.len())?;
    let radial = dot(x, base.as_slice());
    let direction = x
        .iter()
        .zip(base.as_slice())
        .map(|(xi, bi)| xi - radial * bi)
        .collect();
    Ok(TangentVector {
        base: base.clone(),
        direction,
    })
}

/// Moves `base` along the geodesic determined by `v`:
/// `cos(||v||) base + sin(||v||) v / (||v|| + eps)`.
pub fn exp_map(base: &UnitVector, v: &TangentVector) -> UnitVector {
    debug_assert_eq!(base, v.base(), "tangent vector anchored elsewhere");
    let n = v.norm();
    if n == 0.0 {
        return base.clone();
    }
    let (sin_n, cos_n) = n.sin_cos();
    let scale = sin_n / (n + NORM_EPS);
    let coords = base
        .as_slice()
        .iter()
        .zip(&v.direction)
        .map(|(b, u)| cos_n * b + scale * u)
        .collect();
    UnitVector::from_normalized(coords)
}

/// Levi-Civita transport of `u` along the minimizing geodesic from `from`
/// to `to`:
/// `u' = u - <u, to> / (1 + <from, to>) (from + to)`.
pub fn parallel_transport(
    from: &UnitVector,
    to: &UnitVector,
    u: &TangentVector,
) -> Result<TangentVector> {
    check_dims(from.dim(), to.dim())?;
    debug_assert_eq!(from, u.base());
    let c = dot(from.as_slice(), to.as_slice());
    if 1.0 + c < 1e-9 {
        return Err(CoreError::TransportUndefined);
    }
    let factor = dot(u.direction(), to.as_slice()) / (1.0 + c);
    let direction = u
        .direction()
        .iter()
        .zip(from.as_slice().iter().zip(to.as_slice()))
        .map(|(ui, (fi, ti))| ui - factor * (fi + ti))
        .collect();
    Ok(TangentVector {
        base: to.clone(),
        direction,
    })
}

/// Recursive angular chart: `psi_i = arccos(z_i / sqrt(sum_{j>=i} z_j^2))`
/// for `i <= d-2`, with the longitude read off the last two coordinates.
pub fn cartesian_to_angular(z: &UnitVector) -> Result<AngularCoords> {
    let d = z.dim();
    let c = z.as_slice();
    // tail[i] = sum_{j >= i} z_j^2
    let mut tail = vec![0.0; d + 1];
    for i in (0..d).rev() {
        tail[i] = tail[i + 1] + c[i] * c[i];
    }
    let mut latitudes = Vec::with_capacity(d.saturating_sub(2));
    for i in 0..d - 2 {
        let radical = tail[i].sqrt();
        if radical < 1e-12 {
            return Err(CoreError::CoordinateSingularity);
        }
        latitudes.push((c[i] / radical).clamp(-1.0, 1.0).acos());
    }
    let radical = (c[d - 2] * c[d - 2] + c[d - 1] * c[d - 1]).sqrt();
    if radical < 1e-12 {
        return Err(CoreError::CoordinateSingularity);
    }
    let base = (c[d - 2] / radical).clamp(-1.0, 1.0).acos();
    let longitude = if c[d - 1] >= 0.0 {
        base
    } else {
        std::f64::consts::TAU - base
    };
    Ok(AngularCoords {
        latitudes,
        longitude,
    })
}

/// Inverse of the angular chart, used to validate round trips.
pub fn angular_to_cartesian(a: &AngularCoords) -> UnitVector {
    let d = a.latitudes.len() + 2;
    let mut coords = vec![0.0; d];
    let mut sin_prod = 1.0;
    for (i, psi) in a.latitudes.iter().enumerate() {
        coords[i] = sin_prod * psi.cos();
        sin_prod *= psi.sin();
    }
    coords[d - 2] = sin_prod * a.longitude.cos();
    coords[d - 1] = sin_prod * a.longitude.sin();
    UnitVector::from_normalized(coords)
}

/// Haar-random rotation matrix (row-major) via Gram–Schmidt on a Gaussian
/// matrix, with the determinant sign fixed to +1.
pub fn random_rotation<R: rand::Rng>(d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let mut rows: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        let mut ok = true;
        for i in 0..d {
            for j in 0..i {
                let proj = dot(&rows[i], &rows[j]);
                for k in 0..d {
                    rows[i][k] -= proj * rows[j][k];
                }
            }
            let n = norm(&rows[i]);
            if n < 1e-8 {
                ok = false;
                break;
            }
            rows[i].iter_mut().for_each(|x| *x /= n);
        }
        if !ok {
            continue;
        }
        // A reflection (det -1) becomes a rotation by flipping one row; the
        // sign is irrelevant to isometry but keeps the SO(d) contract.
        if det_sign(&rows) < 0.0 {
            rows[0].iter_mut().for_each(|x| *x = -*x);
        }
        return rows;
    }
}

fn det_sign(m: &[Vec<f64>]) -> f64 {
    let d = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut sign = 1.0;
    for col in 0..d {
        let pivot = (col..d).max_by(|&i, &j| {
            a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()
        });
        let p = pivot.unwrap();
        if a[p][col].abs() < 1e-12 {
            return 0.0;
        }
        if p != col {
            a.swap(p, col);
            sign = -sign;
        }
        if a[col][col] < 0.0 {
            sign = -sign;
        }
        for row in col + 1..d {
            let f = a[row][col] / a[col][col];
            for k in col..d {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    sign
}

/// Applies a row-major matrix to a vector.
pub fn apply_matrix(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, x)).collect()
}
