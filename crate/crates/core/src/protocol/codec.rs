//! Byte-level encoding of masked frames and of the framed messages.
//!
//! Frame layout (all integers big-endian):
//!
//! ```text
//! "EODF" | version u8 = 1 | kind u8 | body length u32 | body
//! ```
//!
//! Request body: `frame_id u64 | encoding u8 | width u32 | height u32 |
//! channels u8 | payload`. A RAW payload is the row-major samples; a MASKED
//! payload is the mask as LEB128 run lengths, alternating zero-run and
//! one-run and starting with a (possibly empty) zero-run, followed by the
//! samples of the retained pixels in row-major order.
//!
//! Response body: `frame_id u64 | count u32 | count x (class u8 |
//! confidence u16 (/65535) | left f32 | top f32 | right f32 | bottom f32)`.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::detector::{BoundingBox, Detection, ObjectClass};
use crate::imageio::{Image, Mask};
use crate::saliency::MaskedImage;

pub const MAGIC: &[u8; 4] = b"EODF";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 10;
const REQUEST_HEADER_LEN: usize = 18;
const DETECTION_LEN: usize = 19;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown message kind {0:#04x}")]
    BadKind(u8),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("malformed payload: {0}")]
    Payload(String),
    #[error("body of {0} bytes exceeds the u32 length field")]
    TooLarge(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    Request = 0x01,
    Response = 0x02,
}

impl MessageKind {
    fn from_byte(b: u8) -> Result<Self, ProtocolError> {
        match b {
            0x01 => Ok(MessageKind::Request),
            0x02 => Ok(MessageKind::Response),
            other => Err(ProtocolError::BadKind(other)),
        }
    }
}

pub fn encode_varint(mut value: u64, out: &mut Vec<u8>) {
    while value >= 0x80 {
        out.push((value as u8) | 0x80);
        value >>= 7;
    }
    out.push(value as u8);
}

pub fn varint_len(value: u64) -> usize {
    let bits = 64 - value.leading_zeros() as usize;
    bits.div_ceil(7).max(1)
}

/// Returns the value and the number of bytes consumed.
pub fn decode_varint(buf: &[u8]) -> Result<(u64, usize), ProtocolError> {
    let mut value = 0u64;
    for (i, &byte) in buf.iter().enumerate().take(10) {
        let bits = u64::from(byte & 0x7f);
        if i == 9 && bits > 1 {
            return Err(ProtocolError::Payload("varint overflows u64".into()));
        }
        value |= bits << (7 * i);
        if byte & 0x80 == 0 {
            return Ok((value, i + 1));
        }
    }
    if buf.len() >= 10 {
        Err(ProtocolError::Payload("varint longer than 10 bytes".into()))
    } else {
        Err(ProtocolError::Payload("truncated varint".into()))
    }
}

/// Mask run lengths, alternating zero-run / one-run, starting with zeros.
fn mask_runs(mask: &Mask) -> Vec<u64> {
    let mut runs = Vec::new();
    let mut current = 0u8;
    let mut len = 0u64;
    for &b in mask.bits() {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

/// Size of [`encode_masked_payload`]'s output, computed without building it.
pub fn masked_payload_len(mask: &Mask, channels: usize) -> usize {
    let runs: usize = mask_runs(mask).into_iter().map(varint_len).sum();
    runs + mask.count_ones() * channels
}

pub fn encode_masked_payload(masked: &MaskedImage) -> Vec<u8> {
    let c = masked.image.channels();
    let mut out = Vec::with_capacity(masked_payload_len(&masked.mask, c));
    for run in mask_runs(&masked.mask) {
        encode_varint(run, &mut out);
    }
    for (px, &bit) in masked.image.pixels().chunks_exact(c).zip(masked.mask.bits()) {
        if bit == 1 {
            out.extend_from_slice(px);
        }
    }
    out
}

/// Walk the run-length section. Returns the mask bits and the offset of the
/// first sample byte.
fn decode_runs(bytes: &[u8], pixels: usize) -> Result<(Vec<u8>, usize), ProtocolError> {
    let mut bits = Vec::with_capacity(pixels);
    let mut pos = 0usize;
    let mut value = 0u8;
    while bits.len() < pixels {
        let (run, used) = decode_varint(&bytes[pos..]).map_err(|e| match e {
            ProtocolError::Payload(m) if m.starts_with("truncated") => ProtocolError::Length(format!(
                "run lengths cover {} of {pixels} pixels",
                bits.len()
            )),
            other => other,
        })?;
        pos += used;
        let remaining = (pixels - bits.len()) as u64;
        if run > remaining {
            return Err(ProtocolError::Length(format!(
                "run of {run} overflows the {pixels}-pixel frame"
            )));
        }
        bits.resize(bits.len() + run as usize, value);
        value ^= 1;
    }
    Ok((bits, pos))
}

pub fn decode_masked_payload(
    bytes: &[u8],
    width: usize,
    height: usize,
    channels: usize,
) -> Result<MaskedImage, ProtocolError> {
    let pixels = width * height;
    if pixels == 0 || !(channels == 1 || channels == 3) {
        return Err(ProtocolError::Payload(format!(
            "invalid geometry {width}x{height}x{channels}"
        )));
    }
    let (bits, start) = decode_runs(bytes, pixels)?;
    let ones = bits.iter().filter(|&&b| b == 1).count();
    let samples = &bytes[start..];
    if samples.len() != ones * channels {
        return Err(ProtocolError::Length(format!(
            "{} sample bytes for {ones} retained pixels x {channels} channels",
            samples.len()
        )));
    }
    let mut pixels_out = vec![0u8; pixels * channels];
    let mut src = samples.chunks_exact(channels);
    for (dst, &bit) in pixels_out.chunks_exact_mut(channels).zip(&bits) {
        if bit == 1 {
            dst.copy_from_slice(src.next().expect("sample count checked"));
        }
    }
    let discard_ratio = (pixels - ones) as f64 / pixels as f64;
    let image = Image::new(width, height, channels, pixels_out).map_err(|e| ProtocolError::Payload(e.to_string()))?;
    let mask = Mask::new(width, height, bits).map_err(|e| ProtocolError::Payload(e.to_string()))?;
    Ok(MaskedImage {
        image,
        mask,
        discard_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Raw = 0,
    Masked = 1,
}

impl std::fmt::Display for Encoding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Encoding::Raw => "raw",
            Encoding::Masked => "masked",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffloadRequest {
    pub frame_id: u64,
    pub encoding: Encoding,
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub payload: Vec<u8>,
}

impl OffloadRequest {
    pub fn raw(frame_id: u64, image: &Image) -> Self {
        OffloadRequest {
            frame_id,
            encoding: Encoding::Raw,
            width: image.width() as u32,
            height: image.height() as u32,
            channels: image.channels() as u8,
            payload: image.pixels().to_vec(),
        }
    }

    pub fn masked(frame_id: u64, masked: &MaskedImage) -> Self {
        OffloadRequest {
            frame_id,
            encoding: Encoding::Masked,
            width: masked.image.width() as u32,
            height: masked.image.height() as u32,
            channels: masked.image.channels() as u8,
            payload: encode_masked_payload(masked),
        }
    }

    /// Rebuild the frame the edge runs detection on. RAW frames come back
    /// with an all-ones mask.
    pub fn to_masked_image(&self) -> Result<MaskedImage, ProtocolError> {
        let (w, h, c) = (self.width as usize, self.height as usize, usize::from(self.channels));
        match self.encoding {
            Encoding::Masked => decode_masked_payload(&self.payload, w, h, c),
            Encoding::Raw => {
                let image = Image::new(w, h, c, self.payload.clone())
                    .map_err(|e| ProtocolError::Payload(e.to_string()))?;
                Ok(MaskedImage {
                    image,
                    mask: Mask::ones(w, h),
                    discard_ratio: 0.0,
                })
            }
        }
    }

    fn validate(&self) -> Result<(), ProtocolError> {
        let (w, h, c) = (self.width as usize, self.height as usize, usize::from(self.channels));
        if w == 0 || h == 0 || !(c == 1 || c == 3) {
            return Err(ProtocolError::Payload(format!("invalid geometry {w}x{h}x{c}")));
        }
        match self.encoding {
            Encoding::Raw if self.payload.len() != w * h * c => Err(ProtocolError::Length(format!(
                "RAW payload of {} bytes for {w}x{h}x{c}",
                self.payload.len()
            ))),
            Encoding::Raw => Ok(()),
            Encoding::Masked => {
                let (bits, start) = decode_runs(&self.payload, w * h)?;
                let ones = bits.iter().filter(|&&b| b == 1).count();
                if self.payload.len() - start != ones * c {
                    return Err(ProtocolError::Length(format!(
                        "{} sample bytes for {ones} retained pixels x {c} channels",
                        self.payload.len() - start
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn encode_body(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(REQUEST_HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.frame_id.to_be_bytes());
        out.push(self.encoding as u8);
        out.extend_from_slice(&self.width.to_be_bytes());
        out.extend_from_slice(&self.height.to_be_bytes());
        out.push(self.channels);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode_body(body: &[u8]) -> Result<Self, ProtocolError> {
        if body.len() < REQUEST_HEADER_LEN {
            return Err(ProtocolError::Length(format!(
                "request body of {} bytes is shorter than its header",
                body.len()
            )));
        }
        let encoding = match body[8] {
            0 => Encoding::Raw,
            1 => Encoding::Masked,
            other => return Err(ProtocolError::Payload(format!("unknown encoding {other}"))),
        };
        let req = OffloadRequest {
            frame_id: u64::from_be_bytes(body[0..8].try_into().unwrap()),
            encoding,
            width: u32::from_be_bytes(body[9..13].try_into().unwrap()),
            height: u32::from_be_bytes(body[13..17].try_into().unwrap()),
            channels: body[17],
            payload: body[REQUEST_HEADER_LEN..].to_vec(),
        };
        req.validate()?;
        Ok(req)
    }
}

/// Detection as carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireDetection {
    pub class: ObjectClass,
    /// Confidence scaled by 65535.
    pub confidence: u16,
    pub left: f32,
    pub top: f32,
    pub right: f32,
    pub bottom: f32,
}

impl From<&Detection> for WireDetection {
    fn from(d: &Detection) -> Self {
        WireDetection {
            class: d.class,
            confidence: (d.confidence.clamp(0.0, 1.0) * 65535.0).round() as u16,
            left: d.bbox.left as f32,
            top: d.bbox.top as f32,
            right: d.bbox.right as f32,
            bottom: d.bbox.bottom as f32,
        }
    }
}

impl WireDetection {
    pub fn confidence(&self) -> f64 {
        f64::from(self.confidence) / 65535.0
    }

    pub fn to_detection(&self) -> Option<Detection> {
        let bbox = BoundingBox::new(
            f64::from(self.left),
            f64::from(self.top),
            f64::from(self.right),
            f64::from(self.bottom),
        )
        .ok()?;
        Some(Detection {
            class: self.class,
            bbox,
            confidence: self.confidence(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResponse {
    pub frame_id: u64,
    pub detections: Vec<WireDetection>,
}

impl DetectionResponse {
    pub fn new(frame_id: u64, detections: &[Detection]) -> Self {
        DetectionResponse {
            frame_id,
            detections: detections.iter().map(WireDetection::from).collect(),
        }
    }

    pub fn encode_body(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + DETECTION_LEN * self.detections.len());
        out.extend_from_slice(&self.frame_id.to_be_bytes());
        out.extend_from_slice(&(self.detections.len() as u32).to_be_bytes());
        for d in &self.detections {
            out.push(d.class.id());
            out.extend_from_slice(&d.confidence.to_be_bytes());
            for v in [d.left, d.top, d.right, d.bottom] {
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
        out
    }

    pub fn decode_body(body: &[u8]) -> Result<Self, ProtocolError> {
        if body.len() < 12 {
            return Err(ProtocolError::Length("response body shorter than 12 bytes".into()));
        }
        let frame_id = u64::from_be_bytes(body[0..8].try_into().unwrap());
        let count = u32::from_be_bytes(body[8..12].try_into().unwrap()) as usize;
        let rest = &body[12..];
        if rest.len() != count * DETECTION_LEN {
            return Err(ProtocolError::Length(format!(
                "{} detection bytes for {count} detections",
                rest.len()
            )));
        }
        let f32_at = |chunk: &[u8], at: usize| f32::from_be_bytes(chunk[at..at + 4].try_into().unwrap());
        let detections = rest
            .chunks_exact(DETECTION_LEN)
            .map(|c| {
                Ok(WireDetection {
                    class: ObjectClass::from_id(c[0])
                        .ok_or_else(|| ProtocolError::Payload(format!("unknown class id {}", c[0])))?,
                    confidence: u16::from_be_bytes([c[1], c[2]]),
                    left: f32_at(c, 3),
                    top: f32_at(c, 7),
                    right: f32_at(c, 11),
                    bottom: f32_at(c, 15),
                })
            })
            .collect::<Result<_, ProtocolError>>()?;
        Ok(DetectionResponse { frame_id, detections })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Request(OffloadRequest),
    Response(DetectionResponse),
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Request(_) => MessageKind::Request,
            Message::Response(_) => MessageKind::Response,
        }
    }

    pub fn to_frame(&self) -> Result<Vec<u8>, ProtocolError> {
        let body = match self {
            Message::Request(r) => r.encode_body(),
            Message::Response(r) => r.encode_body(),
        };
        frame_message(self.kind(), &body)
    }
}

pub fn frame_message(kind: MessageKind, body: &[u8]) -> Result<Vec<u8>, ProtocolError> {
    let len = u32::try_from(body.len()).map_err(|_| ProtocolError::TooLarge(body.len()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(kind as u8);
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(body);
    Ok(out)
}

/// Check the fixed header; returns the kind and the announced body length.
fn parse_header(header: &[u8; HEADER_LEN]) -> Result<(MessageKind, usize), ProtocolError> {
    let magic: [u8; 4] = header[0..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    if header[4] != VERSION {
        return Err(ProtocolError::BadVersion(header[4]));
    }
    let kind = MessageKind::from_byte(header[5])?;
    let len = u32::from_be_bytes(header[6..10].try_into().unwrap()) as usize;
    Ok((kind, len))
}

fn decode_body(kind: MessageKind, body: &[u8]) -> Result<Message, ProtocolError> {
    Ok(match kind {
        MessageKind::Request => Message::Request(OffloadRequest::decode_body(body)?),
        MessageKind::Response => Message::Response(DetectionResponse::decode_body(body)?),
    })
}

/// Parse exactly one complete frame.
pub fn parse_message(bytes: &[u8]) -> Result<Message, ProtocolError> {
    if bytes.len() < HEADER_LEN {
        return Err(ProtocolError::Length(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let (kind, len) = parse_header(bytes[..HEADER_LEN].try_into().unwrap())?;
    if bytes.len() - HEADER_LEN != len {
        return Err(ProtocolError::Length(format!(
            "header announces {len} body bytes, frame carries {}",
            bytes.len() - HEADER_LEN
        )));
    }
    decode_body(kind, &bytes[HEADER_LEN..])
}

/// Read one frame from a stream. `Ok(None)` on a clean end of stream
/// before any header byte.
pub fn read_message<R: Read>(reader: &mut R) -> Result<Option<Message>, ProtocolError> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match reader.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => {
                return Err(ProtocolError::Length(format!(
                    "stream ended inside a header after {filled} bytes"
                )))
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let (kind, len) = parse_header(&header)?;
    let mut body = Vec::new();
    reader.take(len as u64).read_to_end(&mut body)?;
    if body.len() != len {
        return Err(ProtocolError::Length(format!(
            "stream ended after {} of {len} body bytes",
            body.len()
        )));
    }
    decode_body(kind, &body).map(Some)
}

pub fn write_message<W: Write>(writer: &mut W, message: &Message) -> Result<(), ProtocolError> {
    writer.write_all(&message.to_frame()?)?;
    writer.flush()?;
    Ok(())
}
