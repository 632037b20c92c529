use std::io::BufReader;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::protocol::{decode_f32s, read_frame, write_frame, Frame, FrameError, Header, PROTOCOL_VERSION};
use super::{check_input, dims3, BackendError, PredictionBackend};
use crate::raster::{LogitMap, TensorChw};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

/// Client for an external model process speaking the frame protocol on stdio.
///
/// Frames from the child are read on a helper thread so every wait can be
/// bounded by the configured timeout.
pub struct SubprocessBackend {
    argv: Vec<String>,
    child: Child,
    stdin: Option<ChildStdin>,
    frames: Receiver<Result<Frame, FrameError>>,
    n_class: usize,
    batch: bool,
    timeout: Duration,
    broken: bool,
}

impl std::fmt::Debug for SubprocessBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubprocessBackend")
            .field("argv", &self.argv)
            .field("n_class", &self.n_class)
            .field("batch", &self.batch)
            .finish()
    }
}

impl SubprocessBackend {
    /// Spawns `argv` and performs the hello handshake. The child must
    /// advertise exactly `n_class` classes.
    pub fn spawn(argv: &[String], n_class: usize, timeout: Duration) -> Result<Self, BackendError> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| BackendError::SpawnFailure("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::SpawnFailure(format!("{program}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");

        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let item = read_frame(&mut reader);
                let stop = item.is_err();
                if tx.send(item).is_err() || stop {
                    break;
                }
            }
        });

        let mut backend = Self {
            argv: argv.to_vec(),
            child,
            stdin,
            frames: rx,
            n_class,
            batch: false,
            timeout,
            broken: false,
        };
        backend.handshake()?;
        Ok(backend)
    }

    fn handshake(&mut self) -> Result<(), BackendError> {
        self.send(&Frame::new(Header::hello()))?;
        match self.recv()?.header {
            Header::Hello {
                version,
                n_class,
                batch,
            } => {
                if version != PROTOCOL_VERSION {
                    return Err(self.violation(format!("version {PROTOCOL_VERSION}"), format!("version {version}")));
                }
                if n_class != Some(self.n_class) {
                    return Err(self.violation(format!("n_class {}", self.n_class), format!("n_class {n_class:?}")));
                }
                self.batch = batch.unwrap_or(false);
                debug!(
                    "backend {:?} ready: n_class={} batch={}",
                    self.argv, self.n_class, self.batch
                );
                Ok(())
            }
            other => Err(self.violation("hello".into(), other.op().into())),
        }
    }

    fn violation(&mut self, expected: String, got: String) -> BackendError {
        self.broken = true;
        BackendError::ProtocolViolation { expected, got }
    }

    fn send(&mut self, frame: &Frame) -> Result<(), BackendError> {
        if self.broken {
            return Err(BackendError::BackendFailure("backend is in a failed state".into()));
        }
        let stdin = self.stdin.as_mut().expect("stdin open while not broken");
        if let Err(e) = write_frame(stdin, frame) {
            debug!("write to backend failed: {e}");
            return Err(self.exit_error());
        }
        Ok(())
    }

    fn recv(&mut self) -> Result<Frame, BackendError> {
        match self.frames.recv_timeout(self.timeout) {
            Ok(Ok(frame)) => Ok(frame),
            Ok(Err(FrameError::Eof)) | Err(RecvTimeoutError::Disconnected) => Err(self.exit_error()),
            Ok(Err(e)) => {
                let got = e.to_string();
                Err(self.violation("complete frame".into(), got))
            }
            Err(RecvTimeoutError::Timeout) => {
                self.broken = true;
                let _ = self.child.kill();
                let _ = self.child.wait();
                Err(BackendError::Timeout(self.timeout.as_secs_f64()))
            }
        }
    }

    /// The child stopped talking: report its exit status.
    fn exit_error(&mut self) -> BackendError {
        self.broken = true;
        self.stdin = None;
        let deadline = Instant::now() + Duration::from_secs(2);
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return BackendError::ChildExit(status.code()),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                _ => {
                    let _ = self.child.kill();
                    let _ = self.child.wait();
                    return BackendError::ProtocolViolation {
                        expected: "frame".into(),
                        got: "closed output stream".into(),
                    };
                }
            }
        }
    }

    /// Sends `bye` and waits for the child; a nonzero exit is an error.
    pub fn shutdown(mut self) -> Result<(), BackendError> {
        self.send(&Frame::new(Header::Bye))?;
        self.stdin = None;
        let deadline = Instant::now() + self.timeout;
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => {
                    self.broken = true;
                    return if status.success() {
                        Ok(())
                    } else {
                        Err(BackendError::ChildExit(status.code()))
                    };
                }
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                Ok(None) => {
                    self.broken = true;
                    let _ = self.child.kill();
                    let _ = self.child.wait();
                    return Err(BackendError::Timeout(self.timeout.as_secs_f64()));
                }
                Err(e) => return Err(BackendError::BackendFailure(e.to_string())),
            }
        }
    }
}

impl Drop for SubprocessBackend {
    fn drop(&mut self) {
        if !self.broken {
            if let Some(stdin) = self.stdin.as_mut() {
                let _ = write_frame(stdin, &Frame::new(Header::Bye));
            }
            self.stdin = None;
            let deadline = Instant::now() + Duration::from_millis(500);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = self.child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(5));
            }
            warn!("backend {:?} ignored bye; killing it", self.argv);
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl PredictionBackend for SubprocessBackend {
    fn n_class(&self) -> usize {
        self.n_class
    }

    fn input_channels(&self) -> Option<usize> {
        None
    }

    fn supports_batch(&self) -> bool {
        self.batch
    }

    fn predict(&mut self, x: &TensorChw) -> Result<LogitMap, BackendError> {
        check_input(None, x)?;
        let (c, h, w) = (x.channels(), x.height(), x.width());
        self.send(&Frame::with_values(Header::Predict { c, h, w }, x.data()))?;
        let frame = self.recv()?;
        match frame.header {
            Header::Logits { n_class, h: rh, w: rw } => {
                if n_class != self.n_class || rh != h || rw != w {
                    return Err(BackendError::DimMismatch {
                        expected: dims3(self.n_class, h, w),
                        got: dims3(n_class, rh, rw),
                    });
                }
                let values = decode_f32s(&frame.payload);
                LogitMap::new(n_class, h, w, values)
                    .map_err(|e| BackendError::BackendFailure(format!("bad logits payload: {e}")))
            }
            Header::Error { message } => Err(BackendError::BackendFailure(message)),
            other => Err(self.violation("logits".into(), other.op().into())),
        }
    }
}
