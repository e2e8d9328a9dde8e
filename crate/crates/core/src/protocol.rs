//! Wire format spoken by the stream server.
//!
//! Every message is a 4-byte big-endian length followed by that many payload
//! bytes. A request payload is a JSON header object immediately followed by
//! the encoded image; a response payload is a single JSON object.
//!
//! ```text
//! request header:  {"session":"s1","frame_id":7,"timestamp_ms":700,"width":1080,"height":1920,"encoding":"png"}
//! responses:       {"action":"continue","frame_id":7,"latency_ms":{...}}
//!                  {"action":"click","frame_id":7,"x":..,"y":..,"box":[..],"confidence":..,"scores":{..},"latency_ms":{..}}
//!                  {"action":"error","error":{"kind":"malformed_header","message":".."}}
//! ```

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Action, EngineResponse, LatencyBreakdown};
use crate::frame::{decode_image, Frame, FrameError, ImageEncoding};

/// Upper bound on a single payload.
pub const MAX_PAYLOAD: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("payload of {len} bytes exceeds the {max} byte limit")]
    PayloadTooLarge { len: usize, max: usize },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("header says {expected:?} but the image is {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

impl ProtocolError {
    /// Stable snake_case tag used in error responses.
    pub fn kind(&self) -> &'static str {
        match self {
            ProtocolError::Io(_) => "io",
            ProtocolError::PayloadTooLarge { .. } => "payload_too_large",
            ProtocolError::MalformedHeader(_) => "malformed_header",
            ProtocolError::DimensionMismatch { .. } => "dimension_mismatch",
            ProtocolError::Frame(_) => "decode_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestHeader {
    pub session: String,
    pub frame_id: u64,
    pub timestamp_ms: u64,
    pub width: u32,
    pub height: u32,
    pub encoding: ImageEncoding,
}

/// Read one length-prefixed message. `Ok(None)` on a clean end of stream
/// before the length prefix.
pub fn read_message(r: &mut impl Read) -> Result<Option<Vec<u8>>, ProtocolError> {
    let mut len = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut len[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::PayloadTooLarge {
            len,
            max: MAX_PAYLOAD,
        });
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

pub fn write_message(w: &mut impl Write, payload: &[u8]) -> Result<(), ProtocolError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(ProtocolError::PayloadTooLarge {
            len: payload.len(),
            max: MAX_PAYLOAD,
        });
    }
    w.write_all(&(payload.len() as u32).to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

/// Split a request payload into its header and the image bytes that follow
/// the header's closing brace.
pub fn split_payload(payload: &[u8]) -> Result<(RequestHeader, &[u8]), ProtocolError> {
    let mut stream = serde_json::Deserializer::from_slice(payload).into_iter::<RequestHeader>();
    let header = match stream.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(ProtocolError::MalformedHeader(e.to_string())),
        None => return Err(ProtocolError::MalformedHeader("empty payload".into())),
    };
    Ok((header, &payload[stream.byte_offset()..]))
}

pub fn encode_request(header: &RequestHeader, image: &[u8]) -> Vec<u8> {
    let mut out = serde_json::to_vec(header).expect("header serializes");
    out.extend_from_slice(image);
    out
}

/// Decode the image of a request into a frame, checking the declared size.
pub fn request_frame(header: &RequestHeader, image: &[u8]) -> Result<Frame, ProtocolError> {
    let img = decode_image(image, header.encoding, Some((header.width, header.height)))?;
    let actual = (img.width(), img.height());
    if actual != (header.width, header.height) {
        return Err(ProtocolError::DimensionMismatch {
            expected: (header.width, header.height),
            actual,
        });
    }
    Ok(Frame::new(
        header.session.clone(),
        header.frame_id,
        header.timestamp_ms,
        img,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireScores {
    pub primary: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum WireResponse {
    Continue {
        frame_id: u64,
        latency_ms: LatencyBreakdown,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<WireError>,
    },
    Click {
        frame_id: u64,
        x: f64,
        y: f64,
        #[serde(rename = "box")]
        bbox: [f64; 4],
        confidence: f64,
        scores: WireScores,
        latency_ms: LatencyBreakdown,
    },
    Error {
        error: WireError,
    },
}

impl WireResponse {
    pub fn error(e: &ProtocolError) -> Self {
        WireResponse::Error {
            error: WireError {
                kind: e.kind().to_string(),
                message: e.to_string(),
            },
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("response serializes")
    }
}

impl From<&EngineResponse> for WireResponse {
    fn from(r: &EngineResponse) -> Self {
        match &r.action {
            Action::Continue => WireResponse::Continue {
                frame_id: r.frame_id,
                latency_ms: r.latency,
                error: r.fault.as_ref().map(|f| WireError {
                    kind: match f {
                        crate::engine::Fault::OutOfOrderFrame(_) => "out_of_order_frame",
                        crate::engine::Fault::BackendFailure(_) => "backend_failure",
                    }
                    .to_string(),
                    message: f.to_string(),
                }),
            },
            Action::DismissPopup(d) => WireResponse::Click {
                frame_id: r.frame_id,
                x: d.click.x,
                y: d.click.y,
                bbox: d.bbox.corners(),
                confidence: d.confidence,
                scores: WireScores {
                    primary: d.primary_score,
                    secondary: d.secondary_score,
                },
                latency_ms: r.latency,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::RgbImage;
    use std::io::Cursor;

    fn header(encoding: ImageEncoding) -> RequestHeader {
        RequestHeader {
            session: "s".into(),
            frame_id: 3,
            timestamp_ms: 300,
            width: 4,
            height: 2,
            encoding,
        }
    }

    #[test]
    fn framing_round_trip() {
        let mut buf = Vec::new();
        write_message(&mut buf, b"hello").unwrap();
        write_message(&mut buf, b"").unwrap();
        assert_eq!(&buf[..4], &[0, 0, 0, 5]);
        let mut r = Cursor::new(buf);
        assert_eq!(read_message(&mut r).unwrap().unwrap(), b"hello");
        assert_eq!(read_message(&mut r).unwrap().unwrap(), b"");
        assert!(read_message(&mut r).unwrap().is_none());
    }

    #[test]
    fn truncated_and_oversized() {
        let mut r = Cursor::new(vec![0, 0]);
        assert!(matches!(read_message(&mut r), Err(ProtocolError::Io(_))));
        let mut r = Cursor::new(vec![0, 0, 0, 9, 1, 2]);
        assert!(matches!(read_message(&mut r), Err(ProtocolError::Io(_))));
        let mut r = Cursor::new(u32::MAX.to_be_bytes().to_vec());
        assert!(matches!(
            read_message(&mut r),
            Err(ProtocolError::PayloadTooLarge { .. })
        ));
    }

    #[test]
    fn split_raw_payload() {
        let img = RgbImage::from_fn(4, 2, |x, y| [x as u8, y as u8, b'{']).unwrap();
        let payload = encode_request(&header(ImageEncoding::RawRgb8), img.pixels());
        let (h, rest) = split_payload(&payload).unwrap();
        assert_eq!(h, header(ImageEncoding::RawRgb8));
        assert_eq!(rest, img.pixels());
        let frame = request_frame(&h, rest).unwrap();
        assert_eq!(frame.image(), &img);
        assert_eq!((frame.frame_id(), frame.timestamp_ms()), (3, 300));
    }

    #[test]
    fn png_payload_checks_dims() {
        let img = RgbImage::solid(4, 2, [1, 2, 3]).unwrap();
        let png = img.to_png().unwrap();
        let frame = request_frame(&header(ImageEncoding::Png), &png).unwrap();
        assert_eq!(frame.image(), &img);
        let mut h = header(ImageEncoding::Png);
        h.width = 5;
        assert!(matches!(
            request_frame(&h, &png),
            Err(ProtocolError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn malformed_headers() {
        for bad in [
            &b""[..],
            b"not json",
            br#"{"session":"s"}"#,
            br#"{"session":"s","frame_id":-1,"timestamp_ms":0,"width":1,"height":1,"encoding":"png"}"#,
            br#"{"session":"s","frame_id":1,"timestamp_ms":0,"width":1,"height":1,"encoding":"bmp"}"#,
        ] {
            let err = split_payload(bad).unwrap_err();
            assert_eq!(err.kind(), "malformed_header", "{}", String::from_utf8_lossy(bad));
        }
    }

    #[test]
    fn response_json() {
        let r = WireResponse::Continue {
            frame_id: 1,
            latency_ms: LatencyBreakdown::default(),
            error: None,
        };
        let s = String::from_utf8(r.to_json()).unwrap();
        assert!(s.starts_with(r#"{"action":"continue","frame_id":1,"latency_ms":{"#));
        let e = WireResponse::error(&ProtocolError::MalformedHeader("x".into()));
        assert_eq!(
            String::from_utf8(e.to_json()).unwrap(),
            r#"{"action":"error","error":{"kind":"malformed_header","message":"malformed header: x"}}"#
        );
    }
}
