//! On-disk formats: frame stream files, keyword lists and the CSV tables.
//!
//! A stream file is a 16-byte header followed by frames of `dim` 32-bit
//! little-endian floats:
//!
//! ```text
//! magic   "KWSTRM1"   7 bytes
//! kind    u8          0 features, 1 posteriors, 2 detection scores
//! dim     u32 LE
//! period  u32 LE      frame period in ms
//! ```
//!
//! The frame count is implied by the payload length.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::decoder::DetectionEvent;
use crate::eval::PRPoint;
use crate::lstm::UpdateRecord;
use crate::{Error, Frames, Result, FRAME_PERIOD_MS};

pub const STREAM_MAGIC: &[u8; 7] = b"KWSTRM1";
pub const STREAM_HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamKind {
    Features,
    Posteriors,
    Scores,
}

impl StreamKind {
    fn code(self) -> u8 {
        match self {
            StreamKind::Features => 0,
            StreamKind::Posteriors => 1,
            StreamKind::Scores => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(StreamKind::Features),
            1 => Ok(StreamKind::Posteriors),
            2 => Ok(StreamKind::Scores),
            other => Err(Error::Format(format!("unknown stream kind {other}"))),
        }
    }
}

impl std::fmt::Display for StreamKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StreamKind::Features => "features",
            StreamKind::Posteriors => "posteriors",
            StreamKind::Scores => "scores",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub kind: StreamKind,
    pub dim: usize,
    pub frame_period_ms: u32,
}

impl StreamHeader {
    pub fn new(kind: StreamKind, dim: usize) -> Self {
        StreamHeader {
            kind,
            dim,
            frame_period_ms: FRAME_PERIOD_MS,
        }
    }

    /// Fails unless the stream has the given kind and dimension.
    pub fn expect(&self, kind: StreamKind, dim: usize) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!(
                "expected a {kind} stream, got {}",
                self.kind
            )));
        }
        if self.dim != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.dim,
            });
        }
        Ok(())
    }
}

pub struct StreamWriter<W: Write> {
    inner: W,
    dim: usize,
    frames: usize,
    buf: Vec<u8>,
}

impl<W: Write> StreamWriter<W> {
    pub fn new(mut inner: W, header: StreamHeader) -> Result<Self> {
        if header.dim == 0 {
            return Err(Error::Format("stream dimension must be positive".into()));
        }
        let dim = u32::try_from(header.dim)
            .map_err(|_| Error::Format("stream dimension too large".into()))?;
        inner.write_all(STREAM_MAGIC)?;
        inner.write_all(&[header.kind.code()])?;
        inner.write_all(&dim.to_le_bytes())?;
        inner.write_all(&header.frame_period_ms.to_le_bytes())?;
        Ok(StreamWriter {
            inner,
            dim: header.dim,
            frames: 0,
            buf: Vec::with_capacity(4 * header.dim),
        })
    }

    /// Appends one frame, stored as `f32`.
    pub fn write_frame(&mut self, frame: &[f64]) -> Result<()> {
        if frame.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: frame.len(),
            });
        }
        self.buf.clear();
        for &v in frame {
            self.buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.inner.write_all(&self.buf)?;
        self.frames += 1;
        Ok(())
    }

    pub fn frames_written(&self) -> usize {
        self.frames
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub struct StreamReader<R: Read> {
    inner: R,
    header: StreamHeader,
    buf: Vec<u8>,
}

impl<R: Read> StreamReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut head = [0u8; STREAM_HEADER_LEN];
        inner.read_exact(&mut head).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => Error::Format("stream file shorter than its header".into()),
            _ => Error::Io(e),
        })?;
        if &head[..7] != STREAM_MAGIC {
            return Err(Error::Format("not a stream file (bad magic)".into()));
        }
        let kind = StreamKind::from_code(head[7])?;
        let dim = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
        let frame_period_ms = u32::from_le_bytes(head[12..16].try_into().expect("4 bytes"));
        if dim == 0 {
            return Err(Error::Format("stream dimension is zero".into()));
        }
        Ok(StreamReader {
            inner,
            header: StreamHeader {
                kind,
                dim,
                frame_period_ms,
            },
            buf: vec![0; 4 * dim],
        })
    }

    pub fn header(&self) -> StreamHeader {
        self.header
    }

    /// Reads the next frame into `out`; `false` at a clean end of stream.
    pub fn read_frame(&mut self, out: &mut [f64]) -> Result<bool> {
        let mut filled = 0;
        while filled < self.buf.len() {
            match self.inner.read(&mut self.buf[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        if filled == 0 {
            return Ok(false);
        }
        if filled < self.buf.len() {
            return Err(Error::Format(format!(
                "truncated stream: trailing {filled} bytes do not form a frame"
            )));
        }
        for (o, b) in out.iter_mut().zip(self.buf.chunks_exact(4)) {
            *o = f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64;
        }
        Ok(true)
    }

    pub fn read_all(mut self) -> Result<Frames> {
        let mut frames = Frames::new(self.header.dim);
        let mut row = vec![0.0; self.header.dim];
        while self.read_frame(&mut row)? {
            frames.push(&row)?;
        }
        Ok(frames)
    }
}

pub fn open_stream(path: &Path) -> Result<StreamReader<BufReader<File>>> {
    StreamReader::new(BufReader::new(File::open(path)?))
}

pub fn create_stream(path: &Path, header: StreamHeader) -> Result<StreamWriter<BufWriter<File>>> {
    StreamWriter::new(BufWriter::new(File::create(path)?), header)
}

pub fn read_stream_file(path: &Path) -> Result<(StreamHeader, Frames)> {
    let reader = open_stream(path)?;
    let header = reader.header();
    Ok((header, reader.read_all()?))
}

pub fn write_stream_file(path: &Path, kind: StreamKind, frames: &Frames) -> Result<()> {
    let mut w = create_stream(path, StreamHeader::new(kind, frames.dim()))?;
    for f in frames.iter() {
        w.write_frame(f)?;
    }
    w.finish()?;
    Ok(())
}

/// One keyword per line; `#` starts a comment, blank lines are skipped.
pub fn parse_keyword_list(text: &str) -> Result<Vec<String>> {
    let keywords: Vec<String> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect();
    if keywords.is_empty() {
        return Err(Error::Config("keyword list is empty".into()));
    }
    Ok(keywords)
}

pub fn read_keyword_list(path: &Path) -> Result<Vec<String>> {
    parse_keyword_list(&std::fs::read_to_string(path)?)
}

/// `frame / 100` seconds, formatted without going through floats.
pub fn frame_time(frame: usize) -> String {
    let ms = frame as u64 * FRAME_PERIOD_MS as u64;
    format!("{}.{:03}", ms / 1000, ms % 1000)
}

pub const DETECTIONS_HEADER: [&str; 4] = ["frame", "time_seconds", "keyword", "score"];

/// Incremental detections CSV writer.
pub struct DetectionsWriter<W: Write> {
    csv: csv::Writer<W>,
}

impl<W: Write> DetectionsWriter<W> {
    pub fn new(inner: W) -> Result<Self> {
        let mut csv = csv::Writer::from_writer(inner);
        csv.write_record(DETECTIONS_HEADER)?;
        Ok(DetectionsWriter { csv })
    }

    pub fn write(&mut self, event: &DetectionEvent, keywords: &[String]) -> Result<()> {
        self.csv.write_record([
            event.frame.to_string(),
            frame_time(event.frame),
            keywords[event.keyword].clone(),
            event.score.to_string(),
        ])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.csv.flush()?;
        self.csv.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

fn field<'a>(record: &'a csv::StringRecord, i: usize, what: &str) -> Result<&'a str> {
    record
        .get(i)
        .ok_or_else(|| Error::Format(format!("missing column {what}")))
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    i: usize,
    what: &str,
) -> Result<T> {
    let raw = field(record, i, what)?;
    raw.trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad {what} value {raw:?}")))
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format(format!(
            "expected columns {}, got {}",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

/// A parsed detections row.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionRow {
    pub frame: usize,
    pub keyword: String,
    pub score: f64,
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    check_header(&mut reader, &DETECTIONS_HEADER)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        out.push(DetectionRow {
            frame: parse_field(&record, 0, "frame")?,
            keyword: field(&record, 2, "keyword")?.to_string(),
            score: parse_field(&record, 3, "score")?,
        });
    }
    Ok(out)
}

pub const TRUTH_HEADER: [&str; 4] = ["keyword", "utterance", "utterance_end_frame", "end_frame"];

/// A keyword occurrence; `end_frame` is in stream coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruthRow {
    pub keyword: String,
    pub utterance: usize,
    pub utterance_end_frame: usize,
    pub end_frame: usize,
}

pub fn write_truth(path: &Path, rows: &[TruthRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRUTH_HEADER)?;
    for r in rows {
        w.write_record([
            r.keyword.clone(),
            r.utterance.to_string(),
            r.utterance_end_frame.to_string(),
            r.end_frame.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    check_header(&mut reader, &TRUTH_HEADER)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        out.push(TruthRow {
            keyword: field(&record, 0, "keyword")?.to_string(),
            utterance: parse_field(&record, 1, "utterance")?,
            utterance_end_frame: parse_field(&record, 2, "utterance_end_frame")?,
            end_frame: parse_field(&record, 3, "end_frame")?,
        });
    }
    Ok(out)
}

pub const MANIFEST_HEADER: [&str; 4] = ["id", "transcription", "frames", "start_frame"];

/// An utterance of a corpus stored as one concatenated stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub transcription: String,
    pub frames: usize,
    pub start_frame: usize,
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_HEADER)?;
    for r in rows {
        w.write_record([
            r.id.clone(),
            r.transcription.clone(),
            r.frames.to_string(),
            r.start_frame.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    check_header(&mut reader, &MANIFEST_HEADER)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        out.push(ManifestRow {
            id: field(&record, 0, "id")?.to_string(),
            transcription: field(&record, 1, "transcription")?.to_string(),
            frames: parse_field(&record, 2, "frames")?,
            start_frame: parse_field(&record, 3, "start_frame")?,
        });
    }
    Ok(out)
}

pub fn write_pr_csv<W: Write>(inner: W, points: &[PRPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(inner);
    w.write_record(["threshold", "precision", "recall", "f1"])?;
    for p in points {
        w.write_record([
            p.threshold.to_string(),
            p.precision.to_string(),
            p.recall.to_string(),
            p.f1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_loss_log<W: Write>(inner: W, log: &[UpdateRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(inner);
    w.write_record([
        "update",
        "segments",
        "frames",
        "loss_per_segment",
        "loss_per_frame",
        "grad_norm",
        "learning_rate",
    ])?;
    for r in log {
        w.write_record([
            r.update.to_string(),
            r.segments.to_string(),
            r.frames.to_string(),
            r.loss_per_segment().to_string(),
            r.loss_per_frame().to_string(),
            r.grad_norm.to_string(),
            r.learning_rate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
