//! Line-oriented verification service.
//!
//! Each request is one UTF-8 JSON object terminated by LF:
//! `{"signboard": "<base64>", "lon": 116.3, "lat": 39.9, "variant": "v2*"}`
//! (`variant` optional). Each reply is one LF-terminated JSON line: either a
//! verification result or `{"error": {"kind": "...", "message": "..."}}`.
//! A bad line gets an error reply and the connection stays open.

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use log::{info, warn};
use poiverify::pipeline::{Variant, Verifier};
use serde_json::json;

use crate::commands::WireRequest;
use crate::error::{CliError, CliResult};

const POLL: Duration = Duration::from_millis(50);

/// Answers one request line. Never fails; errors become error objects.
pub fn handle_line(verifier: &Verifier, default_variant: Variant, line: &str) -> String {
    let outcome = serde_json::from_str::<WireRequest>(line)
        .map_err(|e| CliError::Usage(format!("malformed request: {e}")))
        .and_then(|w| {
            let variant = w.variant.unwrap_or(default_variant);
            let req = w.to_request()?;
            Ok(verifier.verify(variant, &req)?)
        });
    match outcome {
        Ok(result) => serde_json::to_string(&result).expect("results serialize"),
        Err(e) => json!({"error": {"kind": e.kind(), "message": e.to_string()}}).to_string(),
    }
}

fn serve_connection(
    stream: TcpStream,
    verifier: &Verifier,
    variant: Variant,
    stop: &AtomicBool,
) -> io::Result<()> {
    stream.set_read_timeout(Some(POLL))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut buf = Vec::new();
    loop {
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => return Ok(()),
            Ok(_) if buf.last() == Some(&b'\n') => {
                let reply = match std::str::from_utf8(&buf) {
                    Ok(line) => {
                        let line = line.trim_end_matches(['\n', '\r']);
                        if line.trim().is_empty() {
                            buf.clear();
                            continue;
                        }
                        handle_line(verifier, variant, line)
                    }
                    Err(_) => {
                        json!({"error": {"kind": "usage", "message": "request is not valid UTF-8"}})
                            .to_string()
                    }
                };
                buf.clear();
                writer.write_all(reply.as_bytes())?;
                writer.write_all(b"\n")?;
                writer.flush()?;
            }
            // EOF in the middle of a line: nothing complete to answer
            Ok(_) => return Ok(()),
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                ) =>
            {
                // partial input stays in `buf`; stop only between requests
                if stop.load(Ordering::Relaxed) && buf.is_empty() {
                    return Ok(());
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Accepts connections until `stop` is raised, serving each on its own
/// thread. On stop, new connections are refused, requests already received
/// are answered, and the call returns once every connection has closed.
pub fn serve(
    listener: TcpListener,
    verifier: &Verifier,
    variant: Variant,
    stop: &AtomicBool,
) -> CliResult<()> {
    listener.set_nonblocking(true)?;
    std::thread::scope(|scope| {
        while !stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    stream.set_nonblocking(false)?;
                    scope.spawn(move || {
                        if let Err(e) = serve_connection(stream, verifier, variant, stop) {
                            warn!("connection {peer}: {e}");
                        }
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(POLL),
                Err(e) => return Err(CliError::from(e)),
            }
        }
        info!("shutting down; draining open connections");
        Ok(())
    })
}
