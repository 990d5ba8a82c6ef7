//! Mask-oracle plug-in boundary.
//!
//! Wire protocol (one JSON object per line in each direction):
//!
//! ```text
//! request:  {"keyframe_id": 12, "text": "mug"}
//! response: {"masks": [{"size": [H, W], "counts": [..]}, ...]}
//!           {"masks": [], "error": "reason"}
//! ```

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, RleMask};

/// Given a keyframe and query text, returns zero or more instance masks.
/// Zero masks means the concept is not visible in that keyframe.
pub trait MaskOracle {
    fn masks(&mut self, keyframe_id: u64, query_text: &str) -> Result<Vec<BinaryMask>>;
}

impl<O: MaskOracle + ?Sized> MaskOracle for &mut O {
    fn masks(&mut self, keyframe_id: u64, query_text: &str) -> Result<Vec<BinaryMask>> {
        (**self).masks(keyframe_id, query_text)
    }
}

impl<O: MaskOracle + ?Sized> MaskOracle for Box<O> {
    fn masks(&mut self, keyframe_id: u64, query_text: &str) -> Result<Vec<BinaryMask>> {
        (**self).masks(keyframe_id, query_text)
    }
}

/// Records every call made to the wrapped oracle.
pub struct CountingOracle<O> {
    pub inner: O,
    pub calls: Vec<(u64, String)>,
}

impl<O> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            calls: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.calls.len()
    }
}

impl<O: MaskOracle> MaskOracle for CountingOracle<O> {
    fn masks(&mut self, keyframe_id: u64, query_text: &str) -> Result<Vec<BinaryMask>> {
        self.calls.push((keyframe_id, query_text.to_string()));
        self.inner.masks(keyframe_id, query_text)
    }
}

/// An oracle that never finds anything.
#[derive(Clone, Copy, Debug, Default)]
pub struct EmptyOracle;

impl MaskOracle for EmptyOracle {
    fn masks(&mut self, _keyframe_id: u64, _query_text: &str) -> Result<Vec<BinaryMask>> {
        Ok(Vec::new())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRequest {
    pub keyframe_id: u64,
    pub text: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub masks: Vec<RleMask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Serves `oracle` over a line-delimited stream until EOF. Bad requests and oracle
/// failures produce error responses; the loop keeps going.
pub fn serve_oracle<O: MaskOracle, R: BufRead, W: Write>(oracle: &mut O, input: R, mut output: W) -> Result<()> {
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<oracle input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<OracleRequest>(&line) {
            Ok(req) => match oracle.masks(req.keyframe_id, &req.text) {
                Ok(masks) => OracleResponse {
                    masks: masks.iter().map(BinaryMask::to_rle).collect(),
                    error: None,
                },
                Err(e) => OracleResponse {
                    masks: Vec::new(),
                    error: Some(e.to_string()),
                },
            },
            Err(e) => OracleResponse {
                masks: Vec::new(),
                error: Some(format!("malformed request: {e}")),
            },
        };
        serde_json::to_writer(&mut output, &response)?;
        output
            .write_all(b"\n")
            .and_then(|_| output.flush())
            .map_err(|e| Error::io("<oracle output>", e))?;
    }
    Ok(())
}

/// Talks to an external oracle process over stdin/stdout.
pub struct SubprocessOracle {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

impl SubprocessOracle {
    /// Spawns `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::io(command, e))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self { child, stdin, stdout })
    }
}

impl MaskOracle for SubprocessOracle {
    fn masks(&mut self, keyframe_id: u64, query_text: &str) -> Result<Vec<BinaryMask>> {
        let req = OracleRequest {
            keyframe_id,
            text: query_text.to_string(),
        };
        serde_json::to_writer(&mut self.stdin, &req)?;
        self.stdin
            .write_all(b"\n")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::Oracle(format!("write failed: {e}")))?;
        let mut line = String::new();
        let n = self
            .stdout
            .read_line(&mut line)
            .map_err(|e| Error::Oracle(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(Error::Oracle("oracle process closed its output".into()));
        }
        let resp: OracleResponse = serde_json::from_str(&line)?;
        if let Some(err) = resp.error {
            return Err(Error::Oracle(err));
        }
        resp.masks.iter().map(RleMask::decode).collect()
    }
}

impl Drop for SubprocessOracle {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed;

    impl MaskOracle for Fixed {
        fn masks(&mut self, keyframe_id: u64, text: &str) -> Result<Vec<BinaryMask>> {
            if text == "boom" {
                return Err(Error::Oracle("model failure".into()));
            }
            let mut m = BinaryMask::new(2, 3);
            m.set((keyframe_id % 3) as usize, 1, true);
            Ok(if text == "none" { vec![] } else { vec![m] })
        }
    }

    #[test]
    fn serve_handles_good_bad_and_failing_requests() {
        let input = "{\"keyframe_id\": 4, \"text\": \"mug\"}\nnot json\n{\"keyframe_id\": 1, \"text\": \"boom\"}\n{\"keyframe_id\": 1, \"text\": \"none\"}\n";
        let mut out = Vec::new();
        serve_oracle(&mut Fixed, input.as_bytes(), &mut out).unwrap();
        let lines: Vec<OracleResponse> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 4);
        let m = lines[0].masks[0].decode().unwrap();
        assert!(m.get(1, 1) && m.count() == 1);
        assert!(lines[1].error.as_deref().unwrap().contains("malformed"));
        assert!(lines[2].error.is_some());
        assert!(lines[3].masks.is_empty() && lines[3].error.is_none());
    }
}
