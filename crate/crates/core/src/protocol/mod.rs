//! Vehicle to edge offloading protocol: framed requests carrying a raw or
//! masked frame, and detection responses, over TCP.

mod client;
mod codec;
mod server;

pub use client::{offload, OffloadError};
pub use codec::{
    decode_masked_payload, decode_varint, encode_masked_payload, encode_varint, frame_message,
    masked_payload_len, parse_message, read_message, varint_len, write_message, DetectionResponse,
    Encoding, Message, MessageKind, OffloadRequest, ProtocolError, WireDetection, HEADER_LEN, MAGIC,
    VERSION,
};
pub use server::{Backend, EdgeServer, RequestRecord, ServerHandle};
