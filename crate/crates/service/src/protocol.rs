//! Wire format of the `/stream` endpoint.
//!
//! Client to server, one JSON text message per request:
//! `{frame_id, camera: {fx, fy, cx, cy, w, h, R: [9], t: [3]}, weights: [4], res: [w, h]}`.
//!
//! Server to client, per rendered frame: a binary message with a 16-byte
//! little-endian header `(frame_id u64, w u32, h u32)` followed by row-major
//! RGB8 pixels, then a text message `{frame_id, render_us}`. Rejected
//! requests get a text message `{frame_id, error}` instead.

use serde::{Deserialize, Serialize};
use splatstyle_core::scene::CameraRecord;
use splatstyle_core::{normalize_weights, Camera};

use crate::model::STYLE_SLOTS;

pub const MAX_WIDTH: u32 = 1920;
pub const MAX_HEIGHT: u32 = 1080;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireRequest {
    pub frame_id: u64,
    pub camera: CameraRecord,
    pub weights: Vec<f64>,
    pub res: [u32; 2],
}

/// A validated request: the camera is already at the requested resolution
/// and the weights sum to exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderRequest {
    pub frame_id: u64,
    pub camera: Camera,
    pub weights: [f64; STYLE_SLOTS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub frame_id: Option<u64>,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Telemetry {
    pub frame_id: u64,
    pub render_us: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_id: u64,
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
    pub render_us: u64,
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.rgb.len());
        out.extend_from_slice(&self.frame_id.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.rgb);
        out
    }

    pub fn telemetry(&self) -> Telemetry {
        Telemetry {
            frame_id: self.frame_id,
            render_us: self.render_us,
        }
    }
}

/// Splits a binary frame message into `(frame_id, width, height, pixels)`.
pub fn decode_frame(bytes: &[u8]) -> Option<(u64, u32, u32, &[u8])> {
    if bytes.len() < HEADER_LEN {
        return None;
    }
    let frame_id = u64::from_le_bytes(bytes[0..8].try_into().ok()?);
    let w = u32::from_le_bytes(bytes[8..12].try_into().ok()?);
    let h = u32::from_le_bytes(bytes[12..16].try_into().ok()?);
    let pixels = &bytes[HEADER_LEN..];
    (pixels.len() == w as usize * h as usize * 3).then_some((frame_id, w, h, pixels))
}

/// Frame id of a message that may not parse as a full request.
fn loose_frame_id(text: &str) -> Option<u64> {
    serde_json::from_str::<serde_json::Value>(text)
        .ok()?
        .get("frame_id")?
        .as_u64()
}

pub fn parse_request(text: &str) -> Result<RenderRequest, ErrorReply> {
    let fail = |frame_id, error: String| ErrorReply { frame_id, error };
    let wire: WireRequest =
        serde_json::from_str(text).map_err(|e| fail(loose_frame_id(text), format!("malformed request: {e}")))?;
    let id = Some(wire.frame_id);
    let [w, h] = wire.res;
    if w == 0 || h == 0 || w > MAX_WIDTH || h > MAX_HEIGHT {
        return Err(fail(
            id,
            format!("resolution {w}x{h} outside 1x1..{MAX_WIDTH}x{MAX_HEIGHT}"),
        ));
    }
    if wire.weights.len() != STYLE_SLOTS {
        return Err(fail(
            id,
            format!("expected {STYLE_SLOTS} weights, got {}", wire.weights.len()),
        ));
    }
    let weights = normalize_weights(&wire.weights).map_err(|e| fail(id, e.to_string()))?;
    let camera = Camera::try_from(wire.camera).map_err(|e| fail(id, format!("bad camera: {e}")))?;
    let camera = if (camera.width, camera.height) == (w, h) {
        camera
    } else {
        camera.with_resolution(w, h).map_err(|e| fail(id, e.to_string()))?
    };
    Ok(RenderRequest {
        frame_id: wire.frame_id,
        camera,
        weights: std::array::from_fn(|i| weights[i]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use splatstyle_core::scene::synth::default_test_camera;

    fn wire(res: [u32; 2], weights: Vec<f64>) -> String {
        serde_json::to_string(&WireRequest {
            frame_id: 7,
            camera: default_test_camera(64, 48).into(),
            weights,
            res,
        })
        .unwrap()
    }

    #[test]
    fn frame_header_round_trip() {
        let f = Frame {
            frame_id: u64::MAX - 3,
            width: 2,
            height: 1,
            rgb: vec![1, 2, 3, 4, 5, 6],
            render_us: 9,
        };
        let bytes = f.encode();
        assert_eq!(bytes.len(), 16 + 6);
        assert_eq!(&bytes[..8], &(u64::MAX - 3).to_le_bytes());
        assert_eq!(
            decode_frame(&bytes),
            Some((u64::MAX - 3, 2, 1, &[1u8, 2, 3, 4, 5, 6][..]))
        );
        assert_eq!(decode_frame(&bytes[..20]), None);
    }

    #[test]
    fn request_is_rescaled_and_renormalized() {
        let req = parse_request(&wire([128, 96], vec![0.25, 0.25, 0.25, 0.2505])).unwrap();
        assert_eq!((req.camera.width, req.camera.height), (128, 96));
        assert!((req.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(req.frame_id, 7);
        let same = parse_request(&wire([64, 48], vec![1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(same.camera, default_test_camera(64, 48));
        assert_eq!(same.weights, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejections_carry_the_frame_id() {
        for text in [
            wire([1921, 100], vec![1.0, 0.0, 0.0, 0.0]),
            wire([100, 1081], vec![1.0, 0.0, 0.0, 0.0]),
            wire([0, 10], vec![1.0, 0.0, 0.0, 0.0]),
            wire([64, 48], vec![0.5, 0.5, 0.5, 0.0]),
            wire([64, 48], vec![1.0, 0.0, 0.0]),
            wire([64, 48], vec![1.2, -0.2, 0.0, 0.0]),
        ] {
            assert_eq!(parse_request(&text).unwrap_err().frame_id, Some(7), "{text}");
        }
        let e = parse_request(r#"{"frame_id": 3, "camera": 5}"#).unwrap_err();
        assert_eq!(e.frame_id, Some(3));
        assert_eq!(parse_request("not json").unwrap_err().frame_id, None);
    }

    #[test]
    fn max_resolution_is_accepted() {
        assert!(parse_request(&wire([MAX_WIDTH, MAX_HEIGHT], vec![0.0, 0.0, 0.0, 1.0])).is_ok());
    }
}
