//! Session messages. Control messages are JSON text frames carrying a `kind`
//! tag and a sequence id; images travel in binary frames with a 9-byte header
//! (`u64` big-endian sequence id of the response they belong to, then a panel
//! index) followed by PNG bytes.

use lumisplit_core::imaging::Rgb;
use serde::{Deserialize, Serialize};

/// Panel index of the composited preview in image frames.
pub const PREVIEW_PANEL: u8 = 255;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Request {
    Hello,
    FrameRequest {
        frame: usize,
    },
    Click {
        frame: usize,
        x: usize,
        y: usize,
        #[serde(default)]
        extend: bool,
    },
    Recolor {
        #[serde(default)]
        frame: Option<usize>,
        k: usize,
        color: Rgb,
    },
    Suppress {
        #[serde(default)]
        frame: Option<usize>,
        k: usize,
    },
}

impl Request {
    pub fn kind(&self) -> &'static str {
        match self {
            Request::Hello => "hello",
            Request::FrameRequest { .. } => "frame-request",
            Request::Click { .. } => "click",
            Request::Recolor { .. } => "recolor",
            Request::Suppress { .. } => "suppress",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Response {
    Status {
        frames: usize,
        width: usize,
        height: usize,
        k: usize,
        palette: Vec<Rgb>,
        completed: usize,
    },
    /// Followed by one image frame per panel.
    Layers {
        frame: usize,
        panels: Vec<String>,
    },
    /// Followed by one image frame: the corrected reflectance.
    CorrectResult {
        frame: usize,
        region_pixels: usize,
        source_id: usize,
        corrected_id: usize,
        scores: Vec<Option<f64>>,
    },
    /// Followed by one image frame: the recolored preview.
    Palette {
        frame: usize,
        palette: Vec<Rgb>,
    },
    Error {
        code: String,
        message: String,
    },
}

impl Response {
    pub fn kind(&self) -> &'static str {
        match self {
            Response::Status { .. } => "status",
            Response::Layers { .. } => "layers",
            Response::CorrectResult { .. } => "correct-result",
            Response::Palette { .. } => "palette",
            Response::Error { .. } => "error",
        }
    }

    /// Number of image frames that follow this message.
    pub fn image_count(&self) -> usize {
        match self {
            Response::Layers { panels, .. } => panels.len(),
            Response::CorrectResult { .. } | Response::Palette { .. } => 1,
            _ => 0,
        }
    }
}

/// Response kind paired with each request kind.
pub fn response_kind_for(request_kind: &str) -> Option<&'static str> {
    Some(match request_kind {
        "hello" => "status",
        "frame-request" => "layers",
        "click" => "correct-result",
        "recolor" => "palette",
        "suppress" => "layers",
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub seq: u64,
    #[serde(flatten)]
    pub request: Request,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub seq: u64,
    /// Sequence id of the request this answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_to: Option<u64>,
    #[serde(flatten)]
    pub response: Response,
}

pub fn encode_image(seq: u64, panel: u8, png: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(png.len() + 9);
    out.extend_from_slice(&seq.to_be_bytes());
    out.push(panel);
    out.extend_from_slice(png);
    out
}

/// `(seq, panel, png)` of an image frame.
pub fn decode_image(bytes: &[u8]) -> Option<(u64, u8, &[u8])> {
    if bytes.len() < 9 {
        return None;
    }
    let seq = u64::from_be_bytes(bytes[..8].try_into().ok()?);
    Some((seq, bytes[8], &bytes[9..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn requests_use_kebab_case_tags() {
        let m: ClientMessage = serde_json::from_str(r#"{"seq":3,"kind":"frame-request","frame":2}"#).unwrap();
        assert_eq!(m.request, Request::FrameRequest { frame: 2 });
        let click: ClientMessage = serde_json::from_str(r#"{"seq":4,"kind":"click","frame":0,"x":5,"y":6}"#).unwrap();
        assert_eq!(
            click.request,
            Request::Click {
                frame: 0,
                x: 5,
                y: 6,
                extend: false
            }
        );
        assert!(serde_json::from_str::<ClientMessage>(r#"{"seq":1,"kind":"dance"}"#).is_err());
    }

    #[test]
    fn every_request_kind_has_one_response_kind() {
        for r in [
            Request::Hello,
            Request::FrameRequest { frame: 0 },
            Request::Click {
                frame: 0,
                x: 0,
                y: 0,
                extend: false,
            },
            Request::Recolor {
                frame: None,
                k: 1,
                color: [0.0; 3],
            },
            Request::Suppress { frame: None, k: 1 },
        ] {
            assert!(response_kind_for(r.kind()).is_some());
        }
    }

    #[test]
    fn server_messages_round_trip() {
        let m = ServerMessage {
            seq: 9,
            reply_to: Some(2),
            response: Response::Error {
                code: "bad-request".into(),
                message: "nope".into(),
            },
        };
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains(r#""kind":"error""#));
        assert_eq!(serde_json::from_str::<ServerMessage>(&text).unwrap(), m);
    }

    #[test]
    fn image_header_round_trips() {
        let bytes = encode_image(0x0102, 7, b"png");
        assert_eq!(decode_image(&bytes), Some((0x0102, 7, &b"png"[..])));
        assert_eq!(decode_image(&bytes[..5]), None);
    }
}
