//! Line-delimited JSON alert delivery.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::Alert;
use crate::error::{Error, Result};

const TCP_TIMEOUT: Duration = Duration::from_secs(2);

/// Where alerts go: `file:<path>`, `stdout`, or `tcp:<host>:<port>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SinkSpec {
    File(PathBuf),
    Stdout,
    Tcp(String),
}

impl FromStr for SinkSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "stdout" || s == "-" {
            return Ok(SinkSpec::Stdout);
        }
        if let Some(p) = s.strip_prefix("file:") {
            if p.is_empty() {
                return Err(Error::arg("file sink needs a path"));
            }
            return Ok(SinkSpec::File(PathBuf::from(p)));
        }
        if let Some(addr) = s.strip_prefix("tcp:") {
            let port_ok = addr.rsplit_once(':').is_some_and(|(h, p)| !h.is_empty() && p.parse::<u16>().is_ok());
            if !port_ok {
                return Err(Error::arg(format!("tcp sink '{addr}' is not host:port")));
            }
            return Ok(SinkSpec::Tcp(addr.to_string()));
        }
        Err(Error::arg(format!("unknown sink '{s}' (use file:<path>, stdout or tcp:<host>:<port>)")))
    }
}

impl fmt::Display for SinkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SinkSpec::File(p) => write!(f, "file:{}", p.display()),
            SinkSpec::Stdout => f.write_str("stdout"),
            SinkSpec::Tcp(a) => write!(f, "tcp:{a}"),
        }
    }
}

enum Conn {
    Closed,
    File(File),
    Tcp(TcpStream),
    Failed,
}

/// An opened sink. Connections are made on first delivery; a TCP endpoint
/// that refused once is not retried.
pub struct AlertSink {
    spec: SinkSpec,
    conn: Conn,
    pub delivered: usize,
    pub failures: usize,
}

impl AlertSink {
    pub fn new(spec: SinkSpec) -> Self {
        Self {
            spec,
            conn: Conn::Closed,
            delivered: 0,
            failures: 0,
        }
    }

    pub fn spec(&self) -> &SinkSpec {
        &self.spec
    }

    fn connect(&self) -> io::Result<Conn> {
        match &self.spec {
            SinkSpec::Stdout => Ok(Conn::Closed),
            SinkSpec::File(p) => Ok(Conn::File(OpenOptions::new().create(true).append(true).open(p)?)),
            SinkSpec::Tcp(addr) => {
                let mut last = io::Error::new(io::ErrorKind::NotFound, format!("{addr} did not resolve"));
                for sa in addr.to_socket_addrs()? {
                    match TcpStream::connect_timeout(&sa, TCP_TIMEOUT) {
                        Ok(s) => {
                            s.set_write_timeout(Some(TCP_TIMEOUT))?;
                            return Ok(Conn::Tcp(s));
                        }
                        Err(e) => last = e,
                    }
                }
                Err(last)
            }
        }
    }

    fn write_line(&mut self, line: &[u8]) -> io::Result<()> {
        if matches!(self.conn, Conn::Closed) && self.spec != SinkSpec::Stdout {
            self.conn = match self.connect() {
                Ok(c) => c,
                Err(e) => {
                    self.conn = Conn::Failed;
                    return Err(e);
                }
            };
        }
        match &mut self.conn {
            Conn::Closed => {
                let mut out = io::stdout().lock();
                out.write_all(line)?;
                out.flush()
            }
            Conn::File(f) => f.write_all(line),
            Conn::Tcp(s) => s.write_all(line),
            Conn::Failed => Err(io::Error::new(io::ErrorKind::NotConnected, "sink unavailable")),
        }
    }

    /// Sends one alert as a JSON line. Failures are counted and returned, never panicked on.
    pub fn deliver(&mut self, alert: &Alert) -> Result<()> {
        let mut line = serde_json::to_vec(alert)?;
        line.push(b'\n');
        match self.write_line(&line) {
            Ok(()) => {
                self.delivered += 1;
                Ok(())
            }
            Err(e) => {
                self.failures += 1;
                Err(Error::Io(e))
            }
        }
    }
}
