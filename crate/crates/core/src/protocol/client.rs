use std::io::{self, BufReader};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::codec::{read_message, write_message, DetectionResponse, Message, OffloadRequest, ProtocolError};

#[derive(Debug, Error)]
pub enum OffloadError {
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("cannot connect to {addr}: {source}")]
    Connect {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("protocol error: {0}")]
    Protocol(ProtocolError),
    #[error("server closed the connection without answering")]
    Closed,
    #[error("response for frame {got}, expected {expected}")]
    FrameMismatch { expected: u64, got: u64 },
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

impl OffloadError {
    fn from_protocol(e: ProtocolError, timeout: Duration) -> Self {
        match e {
            ProtocolError::Io(io) if is_timeout(&io) => OffloadError::Timeout(timeout),
            other => OffloadError::Protocol(other),
        }
    }
}

/// Send one request and wait for its response. Returns the response and
/// the measured round-trip time.
pub fn offload(
    server: &str,
    request: &OffloadRequest,
    timeout: Duration,
) -> Result<(DetectionResponse, Duration), OffloadError> {
    let connect_err = |source| OffloadError::Connect {
        addr: server.to_string(),
        source,
    };
    let addrs: Vec<_> = server.to_socket_addrs().map_err(connect_err)?.collect();
    let start = Instant::now();
    let mut last = io::Error::new(io::ErrorKind::AddrNotAvailable, "no address resolved");
    let mut stream = None;
    for addr in addrs {
        match TcpStream::connect_timeout(&addr, timeout) {
            Ok(s) => {
                stream = Some(s);
                break;
            }
            Err(e) => last = e,
        }
    }
    let stream = match stream {
        Some(s) => s,
        None if is_timeout(&last) => return Err(OffloadError::Timeout(timeout)),
        None => return Err(connect_err(last)),
    };
    let remaining = timeout.saturating_sub(start.elapsed()).max(Duration::from_millis(1));
    stream
        .set_read_timeout(Some(remaining))
        .and_then(|_| stream.set_write_timeout(Some(remaining)))
        .and_then(|_| stream.set_nodelay(true))
        .map_err(|e| OffloadError::Protocol(e.into()))?;

    let mut writer = stream.try_clone().map_err(|e| OffloadError::Protocol(e.into()))?;
    write_message(&mut writer, &Message::Request(request.clone()))
        .map_err(|e| OffloadError::from_protocol(e, timeout))?;
    let mut reader = BufReader::new(stream);
    let response = match read_message(&mut reader).map_err(|e| OffloadError::from_protocol(e, timeout))? {
        Some(Message::Response(r)) => r,
        Some(Message::Request(_)) => {
            return Err(OffloadError::Protocol(ProtocolError::Payload(
                "server sent a request frame".into(),
            )))
        }
        None => return Err(OffloadError::Closed),
    };
    let rtt = start.elapsed();
    if response.frame_id != request.frame_id {
        return Err(OffloadError::FrameMismatch {
            expected: request.frame_id,
            got: response.frame_id,
        });
    }
    Ok((response, rtt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::Image;
    use std::net::TcpListener;

    #[test]
    fn refused_connection_is_a_connect_error() {
        // Bind then drop to get a port nobody listens on.
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let req = OffloadRequest::raw(1, &Image::filled(8, 8, 1, 0).unwrap());
        let t0 = Instant::now();
        let err = offload(&format!("127.0.0.1:{port}"), &req, Duration::from_secs(2)).unwrap_err();
        assert!(matches!(err, OffloadError::Connect { .. }), "{err}");
        assert!(t0.elapsed() < Duration::from_secs(3));
    }

    #[test]
    fn silent_server_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let _hold = std::thread::spawn(move || {
            let conn = listener.accept();
            std::thread::sleep(Duration::from_secs(2));
            drop(conn);
        });
        let req = OffloadRequest::raw(1, &Image::filled(8, 8, 1, 0).unwrap());
        let err = offload(&addr.to_string(), &req, Duration::from_millis(200)).unwrap_err();
        assert!(matches!(err, OffloadError::Timeout(_)), "{err}");
    }
}
