//! Point clouds, rigid transforms, Procrustes alignment and cloud distances.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdtree::NeighborIndex;

/// A point in millimetres.
pub type Point3 = nalgebra::Point3<f64>;

/// Ordered, non-empty set of finite points.
///
/// When the cloud is corresponded, index `k` identifies a template point, so the ordering
/// carries meaning and is never changed by any operation in this crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("point cloud"));
        }
        Ok(Self { points })
    }

    pub fn from_coords(coords: &[[f64; 3]]) -> Result<Self> {
        Self::new(coords.iter().map(|c| Point3::new(c[0], c[1], c[2])).collect())
    }

    /// Builds a cloud from an interleaved `x0 y0 z0 x1 y1 z1 ...` vector.
    pub fn from_interleaved(values: &[f64]) -> Result<Self> {
        if !values.len().is_multiple_of(3) {
            return Err(Error::InvalidInput(format!(
                "interleaved coordinate vector length {} is not a multiple of 3",
                values.len()
            )));
        }
        Self::new(
            values
                .chunks_exact(3)
                .map(|c| Point3::new(c[0], c[1], c[2]))
                .collect(),
        )
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point3 {
        let sum = self
            .points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Point3::from(sum / self.points.len() as f64)
    }

    /// Interleaved `x y z` coordinates in point order.
    pub fn to_interleaved(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    /// Twice the largest distance from the centroid.
    pub fn diameter(&self) -> f64 {
        let c = self.centroid();
        2.0 * self
            .points
            .iter()
            .map(|p| (p - c).norm())
            .fold(0.0, f64::max)
    }

    pub fn map_points(&self, f: impl FnMut(&Point3) -> Point3) -> Result<Self> {
        Self::new(self.points.iter().map(f).collect())
    }
}

impl TryFrom<Vec<[f64; 3]>> for PointCloud {
    type Error = Error;

    fn try_from(value: Vec<[f64; 3]>) -> Result<Self> {
        Self::from_coords(&value)
    }
}

impl From<PointCloud> for Vec<[f64; 3]> {
    fn from(value: PointCloud) -> Self {
        value.points.iter().map(|p| [p.x, p.y, p.z]).collect()
    }
}

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Proper rotation followed by a translation: `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("rigid transform"));
        }
        let gram_err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if gram_err > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidInput(format!(
                "rotation is not proper orthonormal (|RᵀR - I| = {gram_err:e}, det = {det})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation by `angle` radians about `axis`, then translation.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if axis.norm() == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix()
        };
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

pub fn apply_transform(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| t.apply_point(p)).collect(),
    }
}

/// Relative threshold on singular values below which a configuration counts as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Least-squares rigid alignment of index-corresponded point sets (no scaling).
///
/// Returns the proper rotation and translation minimising `Σ ‖R·sₖ + t − tₖ‖²`. A reflection is
/// never returned: when the unconstrained optimum is improper the axis belonging to the smallest
/// singular value is flipped.
pub fn procrustes_rigid(source: &PointCloud, target: &PointCloud) -> Result<RigidTransform> {
    procrustes_points(source.points(), target.points())
}

pub(crate) fn procrustes_points(source: &[Point3], target: &[Point3]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::CardinalityMismatch {
            left: source.len(),
            right: target.len(),
        });
    }
    if source.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: source.len(),
        });
    }
    let n = source.len() as f64;
    let cs = source.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let ct = target.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;

    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        let ds = s.coords - cs;
        let dt = t.coords - ct;
        h += ds * dt.transpose();
        spread += ds * ds.transpose();
    }

    // eigenvalues of the scatter matrix are squared singular values of the centred source
    let mut ev: Vec<f64> = spread.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= 0.0 || ev[1].max(0.0).sqrt() <= RANK_TOL * ev[0].sqrt() {
        return Err(Error::Degenerate(
            "source points are coincident or collinear (rank < 2)".into(),
        ));
    }

    let svd = SVD::new(h, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Degenerate("SVD of cross-covariance failed".into())),
    };
    let s = svd.singular_values;
    let smax = s.max();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    if smax <= 0.0 || s[order[1]] <= RANK_TOL * smax {
        return Err(Error::Degenerate(
            "cross-covariance has rank < 2; rotation is not unique".into(),
        ));
    }

    let v = v_t.transpose();
    let ut = u.transpose();
    let d = (v * ut).determinant().signum();
    let mut correction = Matrix3::identity();
    correction[(order[2], order[2])] = d;
    let rotation = v * correction * ut;
    let translation = ct - rotation * cs;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

/// Root-mean-square index-wise distance after applying `t` to `source`.
pub fn rms_residual(t: &RigidTransform, source: &PointCloud, target: &PointCloud) -> f64 {
    let sum: f64 = source
        .points()
        .iter()
        .zip(target.points())
        .map(|(s, q)| (t.apply_point(s) - q).norm_squared())
        .sum();
    (sum / source.len() as f64).sqrt()
}

/// Symmetric mean nearest-neighbour (Chamfer) distance.
pub fn chamfer_mean(a: &PointCloud, b: &PointCloud) -> f64 {
    let ia = NeighborIndex::build(a);
    let ib = NeighborIndex::build(b);
    let ab: f64 = a.points().iter().map(|p| ib.nearest(p).1).sum::<f64>() / a.len() as f64;
    let ba: f64 = b.points().iter().map(|p| ia.nearest(p).1).sum::<f64>() / b.len() as f64;
    0.5 * (ab + ba)
}
