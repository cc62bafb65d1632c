//! JSON scene files.
//!
//! ```json
//! {
//!   "version": 1,
//!   "camera": {
//!     "view": [1, 0, 0, 0,  0, 1, 0, 0,  0, 0, 1, 0,  0, 0, 0, 1],
//!     "fx": 70, "fy": 70, "cx": 31.5, "cy": 31.5,
//!     "width": 64, "height": 64, "near": 0.1, "far": 100
//!   },
//!   "background": [0, 0, 0],
//!   "gaussians": [
//!     { "mean": [0, 0, 4], "scale": [0.3, 0.3, 0.3], "quat": [1, 0, 0, 0],
//!       "opacity": 0.8, "color": [1, 0.5, 0] }
//!   ]
//! }
//! ```
//!
//! `view` is the world-to-camera matrix in row-major order and `quat` is
//! `(w, x, y, z)`. Unknown fields are rejected.

use nalgebra::{Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use splatdiff::camera::Camera;
use splatdiff::error::SplatError;
use splatdiff::gaussian::Gaussian3D;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    version: u32,
    camera: CameraDoc,
    background: [f64; 3],
    gaussians: Vec<GaussianDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraDoc {
    view: [f64; 16],
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    near: f64,
    far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianDoc {
    mean: [f64; 3],
    scale: [f64; 3],
    quat: [f64; 4],
    opacity: f64,
    color: [f64; 3],
}

/// A validated scene file.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFile {
    pub scene: Vec<Gaussian3D>,
    pub camera: Camera,
    pub background: Vector3<f64>,
}

/// Parses and validates; messages carry the line and column for syntax
/// errors and the field path (`gaussians[3].scale`) for invalid values.
pub fn parse_scene(text: &str) -> Result<SceneFile, String> {
    let doc: SceneDoc = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if doc.version != FORMAT_VERSION {
        return Err(format!(
            "version: unsupported format version {}, expected {FORMAT_VERSION}",
            doc.version
        ));
    }
    let c = &doc.camera;
    let camera = Camera::new(
        Matrix4::from_row_slice(&c.view),
        c.fx,
        c.fy,
        c.cx,
        c.cy,
        c.width,
        c.height,
        c.near,
        c.far,
    )
    .map_err(|e| format!("camera: {}", message(e)))?;
    let background = Vector3::from(doc.background);
    if !background.iter().all(|v| (0.0..=1.0).contains(v)) {
        return Err(format!(
            "background: channels must lie in [0, 1], got {:?}",
            doc.background
        ));
    }
    let scene = doc
        .gaussians
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let gaussian = Gaussian3D {
                mean: Vector3::from(g.mean),
                scale: Vector3::from(g.scale),
                quat: Vector4::from(g.quat),
                opacity: g.opacity,
                color: Vector3::from(g.color),
            };
            gaussian
                .validate(&format!("gaussians[{i}]"))
                .map_err(message)?;
            Ok(gaussian)
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(SceneFile {
        scene,
        camera,
        background,
    })
}

fn message(e: SplatError) -> String {
    match e {
        SplatError::InvalidInput(msg) => msg,
        other => other.to_string(),
    }
}

/// Pretty-printed JSON; every number is written with enough digits to parse
/// back to the same `f64`.
pub fn serialize_scene(file: &SceneFile) -> String {
    let v = &file.camera.view;
    let mut view = [0.0; 16];
    for r in 0..4 {
        for c in 0..4 {
            view[4 * r + c] = v[(r, c)];
        }
    }
    let doc = SceneDoc {
        version: FORMAT_VERSION,
        camera: CameraDoc {
            view,
            fx: file.camera.fx,
            fy: file.camera.fy,
            cx: file.camera.cx,
            cy: file.camera.cy,
            width: file.camera.width,
            height: file.camera.height,
            near: file.camera.near,
            far: file.camera.far,
        },
        background: file.background.into(),
        gaussians: file
            .scene
            .iter()
            .map(|g| GaussianDoc {
                mean: g.mean.into(),
                scale: g.scale.into(),
                quat: g.quat.into(),
                opacity: g.opacity,
                color: g.color.into(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("scene documents always serialize");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = r#"{
        "version": 1,
        "camera": {
            "view": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1],
            "fx": 20, "fy": 20, "cx": 7.5, "cy": 7.5,
            "width": 16, "height": 16, "near": 0.1, "far": 100
        },
        "background": [0, 0, 0],
        "gaussians": []
    }"#;

    fn with_gaussian(body: &str) -> String {
        MINIMAL.replace("\"gaussians\": []", &format!("\"gaussians\": [{body}]"))
    }

    #[test]
    fn minimal_file() {
        let file = parse_scene(MINIMAL).unwrap();
        assert!(file.scene.is_empty());
        assert_eq!(file.camera.width, 16);
        assert_eq!(file.camera.view, Matrix4::identity());
    }

    #[test]
    fn view_is_row_major() {
        let text = MINIMAL.replace("0,0,1,0, 0,0,0,1", "0,0,1,3, 0,0,0,1");
        assert_eq!(parse_scene(&text).unwrap().camera.view[(2, 3)], 3.0);
    }

    #[test]
    fn negative_scale_names_the_field() {
        let g = r#"{"mean":[0,0,4],"scale":[0.1,-0.2,0.1],"quat":[1,0,0,0],"opacity":0.5,"color":[1,1,1]}"#;
        let ok = g.replace("-0.2", "0.2");
        let text = with_gaussian(&format!("{ok}, {g}"));
        let err = parse_scene(&text).unwrap_err();
        assert!(err.contains("gaussians[1].scale"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let g = r#"{"mean":[0,0,4],"scale":[0.1,0.1,0.1],"rotation":[1,0,0,0],"quat":[1,0,0,0],"opacity":0.5,"color":[1,1,1]}"#;
        let err = parse_scene(&with_gaussian(g)).unwrap_err();
        assert!(err.contains("rotation"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let err = parse_scene("{\n  \"version\": 1,\n  oops\n}").unwrap_err();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn wrong_version_is_rejected() {
        let err = parse_scene(&MINIMAL.replace("\"version\": 1", "\"version\": 2")).unwrap_err();
        assert!(err.starts_with("version"), "{err}");
    }

    #[test]
    fn invalid_camera_and_background() {
        let err = parse_scene(&MINIMAL.replace("\"near\": 0.1", "\"near\": -1")).unwrap_err();
        assert!(err.starts_with("camera"), "{err}");
        let err = parse_scene(&MINIMAL.replace("[0, 0, 0]", "[0, 2, 0]")).unwrap_err();
        assert!(err.starts_with("background"), "{err}");
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![-1e3..1e3f64, -1e-3..1e-3f64]
    }

    fn gaussian() -> impl Strategy<Value = Gaussian3D> {
        (
            proptest::array::uniform3(finite()),
            proptest::array::uniform3(1e-4..10.0f64),
            proptest::array::uniform4(0.1..1.0f64),
            0.0..=1.0f64,
            proptest::array::uniform3(0.0..=1.0f64),
        )
            .prop_map(|(mean, scale, quat, opacity, color)| Gaussian3D {
                mean: mean.into(),
                scale: scale.into(),
                quat: quat.into(),
                opacity,
                color: color.into(),
            })
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(
            scene in proptest::collection::vec(gaussian(), 0..8),
            t in proptest::array::uniform3(finite()),
            focal in 1.0..500.0f64,
            bg in proptest::array::uniform3(0.0..=1.0f64),
        ) {
            let view = splatdiff::camera::rigid_transform(&nalgebra::Matrix3::identity(), &t.into());
            let camera = Camera::new(view, focal, focal * 1.25, 10.3, 7.7, 21, 15, 0.05, 50.0).unwrap();
            let file = SceneFile { scene, camera, background: bg.into() };
            let text = serialize_scene(&file);
            let back = parse_scene(&text).unwrap();
            prop_assert_eq!(&back, &file);
            prop_assert_eq!(serialize_scene(&back), text);
        }
    }
}
