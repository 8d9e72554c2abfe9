//! JSON and JSON-lines reading and writing with line-level diagnostics.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::mapdb::Frame;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Encode {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses a JSON document, reporting the failing line and column.
pub fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(file_err(path))?;
    parse_json(&text, path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| IoError::Encode {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(file_err(path))
}

/// Reads one value per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = File::open(path).map_err(file_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(file_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| IoError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<(), IoError> {
    let file = File::create(path).map_err(file_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|source| IoError::Encode {
            path: path.to_path_buf(),
            source,
        })?;
        w.write_all(b"\n").map_err(file_err(path))?;
    }
    w.flush().map_err(file_err(path))
}

/// Reads a frame stream and numbers each frame's detections.
pub fn read_frames(path: &Path) -> Result<Vec<Frame>, IoError> {
    let mut frames: Vec<Frame> = read_jsonl(path)?;
    frames.iter_mut().for_each(Frame::reindex);
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Box2D, SE3Pose};
    use crate::mapdb::{ClassId, Detection};

    #[test]
    fn frame_line_format() {
        let line = r#"{"frame_id": 3, "pose": {"t": [1, 2, 3], "q": [1, 0, 0, 0]},
            "detections": [{"box": [10, 20, 30, 40], "label": 2, "conf": 0.9}]}"#;
        let f: Frame = serde_json::from_str(line).unwrap();
        assert_eq!(f.frame_id, 3);
        assert_eq!(f.detections[0].bbox, Box2D::new(10.0, 20.0, 30.0, 40.0));
        assert_eq!(f.detections[0].label, ClassId(2));
        assert!(f.detections[0].points.is_empty());
    }

    #[test]
    fn jsonl_roundtrip_and_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.jsonl");
        let frames: Vec<Frame> = (0..3)
            .map(|i| {
                Frame::new(
                    i,
                    SE3Pose::identity(),
                    vec![
                        Detection::new(Box2D::new(0.0, 0.0, 5.0, 5.0), ClassId(1), 0.5),
                        Detection::new(Box2D::new(1.0, 0.0, 5.0, 5.0), ClassId(2), 0.6),
                    ],
                )
            })
            .collect();
        write_jsonl(&path, &frames).unwrap();
        let back = read_frames(&path).unwrap();
        assert_eq!(back, frames);
        assert_eq!(back[2].detections[1].index, 1);

        std::fs::write(&path, "{\"frame_id\": 0, \"pose\": {\"t\": [0,0,0], \"q\": [1,0,0,0]}, \"detections\": []}\n{oops}\n").unwrap();
        match read_frames(&path) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
