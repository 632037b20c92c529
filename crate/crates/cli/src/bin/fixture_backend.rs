//! Test double for external model processes.
//!
//! `adage-fixture-backend <mode> [arg]`
//!
//! - `linear <params.json>` / `conv <params.json>`: the built-in analytic models
//! - `echo <logits.adgt>`: answers every predict with the stored tensor
//! - `truncate`: answers a predict with half a frame, then exits
//! - `wrong-dims`: answers with one extra row
//! - `slow`: never answers a predict
//! - `exit`: exits with status 5 on the first predict
//! - `error`: answers every predict with an error frame
//! - `bad-exit`: exits with status 7 on bye
//!
//! The failure modes advertise two classes.

use std::io::{self, BufReader, BufWriter, Write};
use std::process::exit;
use std::thread;
use std::time::Duration;

use adage::backend::protocol::{decode_f32s, encode_frame, read_frame, write_frame, Frame, FrameError, Header};
use adage::backend::{ConvBackend, LinearBackend, PredictionBackend};
use adage::raster::{read_tensor, TensorChw};
use anyhow::{bail, Context};

enum Mode {
    Model(Box<dyn PredictionBackend>),
    Echo(TensorChw),
    Truncate,
    WrongDims,
    Slow,
    Exit,
    Error,
    BadExit,
}

fn load(args: &[String]) -> anyhow::Result<Mode> {
    let mode = args.first().map(String::as_str).unwrap_or("");
    let arg = || args.get(1).context("missing argument");
    Ok(match mode {
        "linear" => {
            let text = std::fs::read_to_string(arg()?)?;
            Mode::Model(Box::new(LinearBackend::new(&serde_json::from_str(&text)?)?))
        }
        "conv" => {
            let text = std::fs::read_to_string(arg()?)?;
            Mode::Model(Box::new(ConvBackend::new(&serde_json::from_str(&text)?)?))
        }
        "echo" => Mode::Echo(read_tensor(arg()?)?),
        "truncate" => Mode::Truncate,
        "wrong-dims" => Mode::WrongDims,
        "slow" => Mode::Slow,
        "exit" => Mode::Exit,
        "error" => Mode::Error,
        "bad-exit" => Mode::BadExit,
        other => bail!("unknown mode {other:?}"),
    })
}

fn n_class(mode: &Mode) -> usize {
    match mode {
        Mode::Model(b) => b.n_class(),
        Mode::Echo(t) => t.channels(),
        _ => 2,
    }
}

fn logits(n_class: usize, h: usize, w: usize, values: &[f32]) -> Frame {
    Frame::with_values(Header::Logits { n_class, h, w }, values)
}

fn serve(mut mode: Mode) -> anyhow::Result<i32> {
    let mut input = BufReader::new(io::stdin().lock());
    let mut out = BufWriter::new(io::stdout().lock());
    let classes = n_class(&mode);
    loop {
        let frame = match read_frame(&mut input) {
            Ok(f) => f,
            Err(FrameError::Eof) => return Ok(1),
            Err(FrameError::BadHeader(msg)) => {
                write_frame(&mut out, &Frame::new(Header::Error { message: msg }))?;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let (c, h, w) = match frame.header {
            Header::Hello { .. } => {
                let reply = Header::Hello {
                    version: 1,
                    n_class: Some(classes),
                    batch: Some(false),
                };
                write_frame(&mut out, &Frame::new(reply))?;
                continue;
            }
            Header::Bye => return Ok(if matches!(mode, Mode::BadExit) { 7 } else { 0 }),
            Header::Predict { c, h, w } => (c, h, w),
            other => {
                let message = format!("unexpected op {}", other.op());
                write_frame(&mut out, &Frame::new(Header::Error { message }))?;
                continue;
            }
        };
        let x = TensorChw::new(c, h, w, decode_f32s(&frame.payload));
        let reply = match (&mut mode, x) {
            (_, Err(e)) => Frame::new(Header::Error { message: e.to_string() }),
            (Mode::Model(b), Ok(x)) => match b.predict(&x) {
                Ok(y) => logits(classes, h, w, y.data()),
                Err(e) => Frame::new(Header::Error { message: e.to_string() }),
            },
            (Mode::Echo(t), Ok(_)) if t.height() == h && t.width() == w => logits(classes, h, w, t.data()),
            (Mode::Echo(_), Ok(_)) => Frame::new(Header::Error {
                message: "fixture dims differ from request".into(),
            }),
            (Mode::Truncate, Ok(_)) => {
                let bytes = encode_frame(&logits(classes, h, w, &vec![0.0; classes * h * w]));
                out.write_all(&bytes[..bytes.len() / 2])?;
                out.flush()?;
                return Ok(0);
            }
            (Mode::WrongDims, Ok(_)) => logits(classes, h + 1, w, &vec![0.0; classes * (h + 1) * w]),
            (Mode::Slow, Ok(_)) => loop {
                thread::sleep(Duration::from_secs(3600));
            },
            (Mode::Exit, Ok(_)) => return Ok(5),
            (Mode::Error, Ok(_)) => Frame::new(Header::Error {
                message: "model failed".into(),
            }),
            (Mode::BadExit, Ok(_)) => logits(classes, h, w, &vec![0.0; classes * h * w]),
        };
        write_frame(&mut out, &reply)?;
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let code = match load(&args).and_then(serve) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("adage-fixture-backend: {e:#}");
            1
        }
    };
    exit(code);
}
