//! Append-only streaming frame memory.
//!
//! Frames are never removed or mutated once appended. Readers take a
//! [`Snapshot`], an O(1) handle that keeps seeing exactly the frames present
//! when it was taken; the writer keeps appending without waiting on readers.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{check_dim, mean_pool, Embedding};

/// Local window length in frames when none is configured.
pub const DEFAULT_WINDOW_C: usize = 64;

/// One streamed frame with its token keys and cached pooled key.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRecord {
    pub frame_id: usize,
    pub timestamp_s: f64,
    pub token_keys: Vec<Embedding>,
    pub pooled_key: Embedding,
    /// Ground-truth tag for simulation; retrieval never reads it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl FrameRecord {
    pub fn n_tokens(&self) -> usize {
        self.token_keys.len()
    }
}

#[derive(Debug, Clone)]
pub struct MemoryBuffer {
    frames: Arc<Vec<Arc<FrameRecord>>>,
    window_c: usize,
    dim: usize,
}

impl MemoryBuffer {
    pub fn new(dim: usize, window_c: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be at least 1".into()));
        }
        if window_c == 0 {
            return Err(Error::InvalidParameter(
                "window C must be at least 1".into(),
            ));
        }
        Ok(Self {
            frames: Arc::new(Vec::new()),
            window_c,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window_c(&self) -> usize {
        self.window_c
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Arc<FrameRecord>] {
        &self.frames
    }

    pub fn last_timestamp(&self) -> Option<f64> {
        self.frames.last().map(|f| f.timestamp_s)
    }

    /// Appends a frame. The pooled key is computed here, once.
    pub fn append(
        &mut self,
        timestamp_s: f64,
        token_keys: Vec<Embedding>,
        label: Option<String>,
    ) -> Result<Arc<FrameRecord>> {
        if !timestamp_s.is_finite() || timestamp_s < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "timestamp must be finite and non-negative, got {timestamp_s}"
            )));
        }
        if let Some(previous) = self.last_timestamp() {
            if timestamp_s < previous {
                return Err(Error::TimeOrder {
                    previous,
                    got: timestamp_s,
                });
            }
        }
        if token_keys.is_empty() {
            return Err(Error::EmptyInput("frame has no token keys"));
        }
        for k in &token_keys {
            check_dim(self.dim, k.dim())?;
        }
        let pooled_key = mean_pool(&token_keys)?;
        let record = Arc::new(FrameRecord {
            frame_id: self.frames.len(),
            timestamp_s,
            token_keys,
            pooled_key,
            label,
        });
        // Clones only the pointer list, and only while a snapshot is alive.
        Arc::make_mut(&mut self.frames).push(Arc::clone(&record));
        Ok(record)
    }

    /// The last `min(C, len)` frames, oldest first.
    pub fn local_window(&self) -> &[Arc<FrameRecord>] {
        tail(&self.frames, self.window_c)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            frames: Arc::clone(&self.frames),
            dim: self.dim,
        }
    }

    /// Builds a buffer by appending every frame of a parsed stream.
    pub fn from_stream(frames: &[StreamFrame], window_c: usize) -> Result<Self> {
        let first = frames
            .first()
            .ok_or(Error::EmptyInput("stream has no frames"))?;
        let dim = first
            .dim()
            .ok_or(Error::EmptyInput("frame has no token keys"))?;
        let mut buffer = Self::new(dim, window_c)?;
        for f in frames {
            buffer.append(f.t, f.embeddings()?, f.label.clone())?;
        }
        Ok(buffer)
    }
}

fn tail<T>(items: &[T], c: usize) -> &[T] {
    &items[items.len().saturating_sub(c)..]
}

/// Immutable read view over the frames present when it was taken.
#[derive(Debug, Clone)]
pub struct Snapshot {
    frames: Arc<Vec<Arc<FrameRecord>>>,
    dim: usize,
}

impl Snapshot {
    pub fn frames(&self) -> &[Arc<FrameRecord>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, frame_id: usize) -> Option<&Arc<FrameRecord>> {
        self.frames.get(frame_id)
    }

    pub fn local_window(&self, c: usize) -> &[Arc<FrameRecord>] {
        tail(&self.frames, c)
    }
}

/// One line of the stream ingestion format:
/// `{"t": <seconds>, "tokens": [[...], ...], "label": "<opt>"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamFrame {
    pub t: f64,
    pub tokens: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl StreamFrame {
    pub fn dim(&self) -> Option<usize> {
        self.tokens.first().map(Vec::len)
    }

    pub fn embeddings(&self) -> Result<Vec<Embedding>> {
        self.tokens
            .iter()
            .map(|t| Embedding::new(t.clone()))
            .collect()
    }
}

/// Parses a JSONL frame stream. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn read_stream_jsonl<R: BufRead>(reader: R) -> Result<Vec<StreamFrame>> {
    let mut frames = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: line_no, msg };
        let frame: StreamFrame =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let Some(first) = frame.dim() else {
            return Err(parse_err("frame has no tokens".into()));
        };
        let expected = *dim.get_or_insert(first);
        for (k, tok) in frame.tokens.iter().enumerate() {
            if tok.len() != expected {
                return Err(parse_err(format!(
                    "ragged token dims: token {k} has dim {}, expected {expected}",
                    tok.len()
                )));
            }
        }
        if let Err(e) = frame.embeddings() {
            return Err(parse_err(e.to_string()));
        }
        frames.push(frame);
    }
    Ok(frames)
}

pub fn write_stream_jsonl<W: Write>(mut writer: W, frames: &[StreamFrame]) -> Result<()> {
    for f in frames {
        let line = serde_json::to_string(f).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn buffer_with(n: usize, c: usize) -> MemoryBuffer {
        let mut m = MemoryBuffer::new(2, c).unwrap();
        for i in 0..n {
            m.append(i as f64, vec![tok(&[i as f64, 1.0])], None)
                .unwrap();
        }
        m
    }

    fn ids(frames: &[Arc<FrameRecord>]) -> Vec<usize> {
        frames.iter().map(|f| f.frame_id).collect()
    }

    #[test]
    fn append_to_empty() {
        let mut m = MemoryBuffer::new(2, 4).unwrap();
        let f = m
            .append(0.0, vec![tok(&[1.0, 3.0]), tok(&[3.0, 1.0])], None)
            .unwrap();
        assert_eq!(f.frame_id, 0);
        assert_eq!(f.pooled_key, tok(&[2.0, 2.0]));
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn equal_timestamps_accepted() {
        let mut m = MemoryBuffer::new(2, 4).unwrap();
        m.append(3.0, vec![tok(&[1.0, 0.0])], None).unwrap();
        let f = m.append(3.0, vec![tok(&[0.0, 1.0])], None).unwrap();
        assert_eq!(f.frame_id, 1);
    }

    #[test]
    fn timestamp_regression_rejected() {
        let mut m = MemoryBuffer::new(2, 4).unwrap();
        m.append(6.0, vec![tok(&[1.0, 0.0])], None).unwrap();
        assert_eq!(
            m.append(5.0, vec![tok(&[1.0, 0.0])], None).unwrap_err(),
            Error::TimeOrder {
                previous: 6.0,
                got: 5.0
            }
        );
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn dim_mismatch_rejected() {
        let mut m = MemoryBuffer::new(2, 4).unwrap();
        assert_eq!(
            m.append(0.0, vec![tok(&[1.0, 0.0, 0.0])], None)
                .unwrap_err(),
            Error::Dimension {
                expected: 2,
                got: 3
            }
        );
        assert!(m.append(0.0, vec![], None).is_err());
    }

    #[test]
    fn local_window_slices() {
        assert_eq!(ids(buffer_with(10, 4).local_window()), vec![6, 7, 8, 9]);
        assert_eq!(ids(buffer_with(2, 64).local_window()), vec![0, 1]);
        assert!(buffer_with(0, 8).local_window().is_empty());
    }

    #[test]
    fn snapshot_isolation() {
        let mut m = buffer_with(3, 4);
        let s = m.snapshot();
        m.append(10.0, vec![tok(&[0.0, 1.0])], None).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(m.len(), 4);

        let a = m.snapshot();
        let b = m.snapshot();
        assert_eq!(ids(a.frames()), ids(b.frames()));
        assert!(buffer_with(0, 4).snapshot().is_empty());
    }

    #[test]
    fn snapshot_readable_from_other_threads_while_appending() {
        let mut m = buffer_with(5, 4);
        let s = m.snapshot();
        let reader = std::thread::spawn(move || ids(s.frames()));
        for i in 5..50 {
            m.append(i as f64, vec![tok(&[1.0, 0.0])], None).unwrap();
        }
        assert_eq!(reader.join().unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(m.len(), 50);
    }

    #[test]
    fn ids_dense_and_pooled_keys_exact() {
        let m = buffer_with(37, 5);
        for (i, f) in m.frames().iter().enumerate() {
            assert_eq!(f.frame_id, i);
            assert_eq!(mean_pool(&f.token_keys).unwrap(), f.pooled_key);
        }
        assert_eq!(m.local_window().len(), 5);
        assert_eq!(m.local_window().last().unwrap().frame_id, 36);
    }

    #[test]
    fn jsonl_roundtrip_and_errors() {
        let text = "{\"t\": 0.0, \"tokens\": [[1,0],[0,1]], \"label\": \"a\"}\n\n{\"t\": 1.5, \"tokens\": [[2,2]]}\n";
        let frames = read_stream_jsonl(text.as_bytes()).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].label.as_deref(), Some("a"));
        let mut out = Vec::new();
        write_stream_jsonl(&mut out, &frames).unwrap();
        assert_eq!(read_stream_jsonl(out.as_slice()).unwrap(), frames);

        let m = MemoryBuffer::from_stream(&frames, 8).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.frames()[0].pooled_key, tok(&[0.5, 0.5]));

        let ragged = "{\"t\": 0, \"tokens\": [[1,0]]}\n{\"t\": 1, \"tokens\": [[1,0],[1,0,0]]}\n";
        match read_stream_jsonl(ragged.as_bytes()) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("ragged"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let across = "{\"t\": 0, \"tokens\": [[1,0]]}\n{\"t\": 1, \"tokens\": [[1,0,0]]}\n";
        assert!(matches!(
            read_stream_jsonl(across.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            read_stream_jsonl("not json\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
