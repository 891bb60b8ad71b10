use nalgebra::Vector3;

use super::{Camera, Instance, RigidTransform};

/// Result of localizing one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Localized {
    pub pixel: [f64; 2],
    pub camera_point: [f64; 3],
    /// Base frame, meters.
    pub position: [f64; 3],
    /// A person without a face box was localized at the body box center.
    pub face_fallback: bool,
}

/// Pinhole back-projection: `depth · ((u − cx)/fx, (v − cy)/fy, 1)`.
pub fn back_project(camera: &Camera, pixel: [f64; 2], depth: f64) -> Vector3<f64> {
    Vector3::new(
        depth * (pixel[0] - camera.cx) / camera.fx,
        depth * (pixel[1] - camera.cy) / camera.fy,
        depth,
    )
}

/// Forward pinhole projection of a camera-frame point.
pub fn project(camera: &Camera, p: &Vector3<f64>) -> [f64; 2] {
    [camera.fx * p.x / p.z + camera.cx, camera.fy * p.y / p.z + camera.cy]
}

/// Gaze point in the image (face center for people) and in the base frame.
pub fn localize(instance: &Instance, camera: &Camera, base_from_camera: &RigidTransform) -> Localized {
    let (pixel, face_fallback) = match (instance.is_person(), instance.face_bbox) {
        (true, Some(face)) => (face.center(), false),
        (true, None) => {
            log::warn!("no face box for `{}`; using the body box center", instance.id);
            (instance.bbox.center(), true)
        }
        (false, _) => (instance.bbox.center(), false),
    };
    let cam = back_project(camera, pixel, instance.depth);
    let base = base_from_camera.apply(&cam);
    Localized {
        pixel,
        camera_point: cam.into(),
        position: base.into(),
        face_fallback,
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::BoundingBox;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn principal_ray() {
        let cam = camera();
        assert_eq!(back_project(&cam, [cam.cx, cam.cy], 2.0), Vector3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn closed_form_offset() {
        let p = back_project(&camera(), [420.0, 240.0], 1.0);
        assert!((p - Vector3::new(0.2, 0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn people_use_the_face_box() {
        let mut p = instance("p", "person", 100.0, 2.0);
        p.face_bbox = Some(BoundingBox::new(120.0, 110.0, 160.0, 150.0));
        let l = localize(&p, &camera(), &RigidTransform::identity());
        assert_eq!(l.pixel, [140.0, 130.0]);
        assert!(!l.face_fallback);

        p.face_bbox = None;
        let l = localize(&p, &camera(), &RigidTransform::identity());
        assert_eq!(l.pixel, p.bbox.center());
        assert!(l.face_fallback);

        let cup = instance("c", "cup", 100.0, 2.0);
        assert_eq!(localize(&cup, &camera(), &RigidTransform::identity()).pixel, cup.bbox.center());
    }

    #[test]
    fn transform_is_applied() {
        let t = RigidTransform {
            // optical frame (z forward, x right, y down) into x forward, y left, z up
            rotation: [[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]],
            translation: [0.05, 0.0, 0.1],
        };
        let mut c = instance("c", "cup", 0.0, 1.0);
        c.bbox = BoundingBox::new(400.0, 230.0, 440.0, 250.0);
        let l = localize(&c, &camera(), &t);
        // camera point (0.2, 0, 1): 1 m ahead, 0.2 m to the right
        let expected = [1.05, -0.2, 0.1];
        for (a, b) in l.position.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn projection_inverts_back_projection(u in 0.0..640.0f64, v in 0.0..480.0f64, d in 0.1..10.0f64) {
            let cam = camera();
            let back = project(&cam, &back_project(&cam, [u, v], d));
            prop_assert!((back[0] - u).abs() < 1e-9 && (back[1] - v).abs() < 1e-9);
        }
    }
}
