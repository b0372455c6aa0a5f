use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use log::{debug, info, warn};

use super::codec::{read_message, write_message, DetectionResponse, Encoding, Message, ProtocolError};
use crate::detector::{self, Detection, GroundTruth, OracleParams};

/// Where the edge gets its detections from.
#[derive(Debug, Clone)]
pub enum Backend {
    /// Ground-truth oracle over KITTI label files named by frame id.
    Oracle { labels: PathBuf, params: OracleParams },
    /// Precomputed detections, `<store>/<frame_id>.txt`.
    Replay { store: PathBuf },
}

/// One served request, kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestRecord {
    pub frame_id: u64,
    pub encoding: Encoding,
    pub discard_ratio: f64,
    pub detections: usize,
}

/// Label files are looked up as `<id:06>.txt`, then `<id>.txt`.
fn frame_file(dir: &Path, frame_id: u64) -> Option<PathBuf> {
    [format!("{frame_id:06}.txt"), format!("{frame_id}.txt")]
        .into_iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
}

fn load_truths(dir: &Path, frame_id: u64) -> Vec<GroundTruth> {
    let Some(path) = frame_file(dir, frame_id) else {
        warn!("no labels for frame {frame_id} under {}", dir.display());
        return Vec::new();
    };
    match detector::read_kitti_labels(&path) {
        Ok(t) => t,
        Err(e) => {
            warn!("{}: {e}", path.display());
            Vec::new()
        }
    }
}

impl Backend {
    fn detect(&self, frame_id: u64, masked: &crate::saliency::MaskedImage) -> Vec<Detection> {
        match self {
            Backend::Oracle { labels, params } => {
                let truths = load_truths(labels, frame_id);
                detector::oracle_detect(masked, &truths, params)
            }
            Backend::Replay { store } => {
                let id = match frame_file(store, frame_id) {
                    Some(p) => p.file_stem().map(|s| s.to_string_lossy().into_owned()),
                    None => None,
                }
                .unwrap_or_else(|| format!("{frame_id:06}"));
                detector::replay_detect(&id, store).unwrap_or_else(|e| {
                    warn!("replay for frame {frame_id}: {e}");
                    Vec::new()
                })
            }
        }
    }
}

pub struct EdgeServer {
    listener: TcpListener,
    backend: Arc<Backend>,
    records: Arc<Mutex<Vec<RequestRecord>>>,
    stop: Arc<AtomicBool>,
}

impl EdgeServer {
    pub fn bind<A: ToSocketAddrs>(addr: A, backend: Backend) -> io::Result<Self> {
        Ok(EdgeServer {
            listener: TcpListener::bind(addr)?,
            backend: Arc::new(backend),
            records: Arc::default(),
            stop: Arc::default(),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accept connections until shut down, one thread per connection.
    pub fn run(self) -> io::Result<()> {
        let addr = self.local_addr()?;
        info!("edge server listening on {addr}");
        for stream in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    warn!("accept failed: {e}");
                    continue;
                }
            };
            let backend = Arc::clone(&self.backend);
            let records = Arc::clone(&self.records);
            thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = handle_connection(stream, &backend, &records) {
                    warn!("connection {peer:?} closed: {e}");
                }
            });
        }
        Ok(())
    }

    /// Run on a background thread.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::clone(&self.stop);
        let records = Arc::clone(&self.records);
        let thread = thread::spawn(move || self.run());
        Ok(ServerHandle {
            addr,
            stop,
            records,
            thread: Some(thread),
        })
    }
}

fn handle_connection(stream: TcpStream, backend: &Backend, records: &Mutex<Vec<RequestRecord>>) -> Result<(), ProtocolError> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some(msg) = read_message(&mut reader)? {
        let request = match msg {
            Message::Request(r) => r,
            Message::Response(_) => {
                return Err(ProtocolError::Payload("client sent a response frame".into()));
            }
        };
        let masked = request.to_masked_image()?;
        let dets = backend.detect(request.frame_id, &masked);
        debug!(
            "frame {} ({}, discard {:.4}): {} detections",
            request.frame_id,
            request.encoding,
            masked.discard_ratio,
            dets.len()
        );
        records.lock().expect("record log poisoned").push(RequestRecord {
            frame_id: request.frame_id,
            encoding: request.encoding,
            discard_ratio: masked.discard_ratio,
            detections: dets.len(),
        });
        let response = Message::Response(DetectionResponse::new(request.frame_id, &dets));
        write_message(&mut writer, &response)?;
    }
    Ok(())
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    records: Arc<Mutex<Vec<RequestRecord>>>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn records(&self) -> Vec<RequestRecord> {
        self.records.lock().expect("record log poisoned").clone()
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_and_join();
        }
    }
}
