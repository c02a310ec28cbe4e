//! Grasp utilities: point-cloud centroid and the forward / top-down grasp rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric size of an object in meters. Serialized as `[width, height, depth]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 3]", try_from = "[f64; 3]")]
pub struct ObjectExtent {
    pub width: f64,
    pub height: f64,
    pub depth: f64,
}

impl ObjectExtent {
    pub fn new(width: f64, height: f64, depth: f64) -> Result<Self> {
        if [width, height, depth].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(ObjectExtent {
                width,
                height,
                depth,
            })
        } else {
            Err(Error::InvalidArgument(format!(
                "object extent [{width}, {height}, {depth}] must be positive"
            )))
        }
    }
}

impl From<ObjectExtent> for [f64; 3] {
    fn from(e: ObjectExtent) -> Self {
        [e.width, e.height, e.depth]
    }
}

impl TryFrom<[f64; 3]> for ObjectExtent {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        ObjectExtent::new(v[0], v[1], v[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperSpec {
    pub max_opening: f64,
    pub finger_length: f64,
}

impl GripperSpec {
    pub fn new(max_opening: f64, finger_length: f64) -> Result<Self> {
        if max_opening > 0.0 && finger_length > 0.0 {
            Ok(GripperSpec {
                max_opening,
                finger_length,
            })
        } else {
            Err(Error::InvalidArgument(
                "gripper opening and finger length must be positive".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grasp {
    Forward,
    TopDown,
}

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

/// Arithmetic mean of the cloud's points.
pub fn centroid(cloud: &PointCloud) -> Result<Point3> {
    if cloud.points.is_empty() {
        return Err(Error::InvalidArgument("centroid of an empty point cloud".into()));
    }
    let n = cloud.points.len() as f64;
    let mut sum = [0.0; 3];
    for p in &cloud.points {
        for k in 0..3 {
            sum[k] += p[k];
        }
    }
    Ok(sum.map(|s| s / n))
}

/// Top-down when the object is too wide for the gripper or too short for
/// the fingers, otherwise forward.
pub fn select_grasp(extent: &ObjectExtent, gripper: &GripperSpec) -> Grasp {
    if extent.width > gripper.max_opening || extent.height < gripper.finger_length {
        Grasp::TopDown
    } else {
        Grasp::Forward
    }
}

/// Samples points uniformly inside an object's bounding volume centred at
/// `center`. Stands in for a segmented depth-camera cloud.
pub fn sample_cloud(center: Point3, extent: &ObjectExtent, n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = [extent.width / 2.0, extent.height / 2.0, extent.depth / 2.0];
    let points = (0..n)
        .map(|_| {
            let mut p = center;
            for k in 0..3 {
                p[k] += rng.gen_range(-half[k]..=half[k]);
            }
            p
        })
        .collect();
    PointCloud { points }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Point3, b: Point3) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn centroid_examples() {
        let c = |pts: Vec<Point3>| centroid(&PointCloud { points: pts }).unwrap();
        assert_eq!(c(vec![[1.0, 2.0, 3.0]]), [1.0, 2.0, 3.0]);
        assert_eq!(c(vec![[0.0; 3], [2.0; 3]]), [1.0; 3]);
        assert!(close(
            c(vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
            [1.0 / 3.0; 3]
        ));
        assert!(centroid(&PointCloud::default()).is_err());
    }

    #[test]
    fn grasp_examples() {
        let g = GripperSpec::new(0.08, 0.05).unwrap();
        let e = |w, h| ObjectExtent::new(w, h, 0.05).unwrap();
        assert_eq!(select_grasp(&e(0.10, 0.20), &g), Grasp::TopDown);
        assert_eq!(select_grasp(&e(0.05, 0.03), &g), Grasp::TopDown);
        assert_eq!(select_grasp(&e(0.05, 0.20), &g), Grasp::Forward);
    }

    #[test]
    fn sampled_cloud_centres_near_object() {
        let e = ObjectExtent::new(0.1, 0.2, 0.1).unwrap();
        let cloud = sample_cloud([0.3, 0.1, 0.5], &e, 2000, 1);
        let c = centroid(&cloud).unwrap();
        assert!((c[0] - 0.3).abs() < 0.01 && (c[1] - 0.1).abs() < 0.01);
    }

    proptest::proptest! {
        #[test]
        fn centroid_translation_equivariant(
            pts in proptest::collection::vec(proptest::array::uniform3(-10.0f64..10.0), 1..40),
            v in proptest::array::uniform3(-5.0f64..5.0),
        ) {
            let base = centroid(&PointCloud { points: pts.clone() }).unwrap();
            let moved: Vec<Point3> = pts.iter().map(|p| [p[0] + v[0], p[1] + v[1], p[2] + v[2]]).collect();
            let shifted = centroid(&PointCloud { points: moved }).unwrap();
            for k in 0..3 {
                proptest::prop_assert!((shifted[k] - base[k] - v[k]).abs() < 1e-9);
            }
        }

        #[test]
        fn wider_never_flips_to_forward(w in 0.01f64..0.3, dw in 0.0f64..0.2, h in 0.01f64..0.3) {
            let g = GripperSpec::new(0.08, 0.05).unwrap();
            let narrow = select_grasp(&ObjectExtent::new(w, h, 0.05).unwrap(), &g);
            let wide = select_grasp(&ObjectExtent::new(w + dw, h, 0.05).unwrap(), &g);
            proptest::prop_assert!(!(narrow == Grasp::TopDown && wide == Grasp::Forward));
        }
    }
}
