//! Landmark files: one `x y z` triple (world mm) per line, `#` starts a comment.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LandmarkSet {
    pub points: Vec<[f64; 3]>,
    pub label: String,
}

impl LandmarkSet {
    pub fn new(label: impl Into<String>, points: Vec<[f64; 3]>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Data(format!("non-finite landmark {p:?}")));
        }
        Ok(LandmarkSet {
            points,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn parse(label: impl Into<String>, text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let content = line.split('#').next().unwrap_or_default().trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Format(format!(
                    "landmark line {}: expected 3 numbers, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let mut p = [0.0; 3];
            for (slot, field) in p.iter_mut().zip(&fields) {
                *slot = field.parse().map_err(|_| {
                    Error::Format(format!(
                        "landmark line {}: bad number {field:?}",
                        lineno + 1
                    ))
                })?;
            }
            points.push(p);
        }
        LandmarkSet::new(label, points)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.label.is_empty() {
            let _ = writeln!(out, "# {}", self.label);
        }
        for p in &self.points {
            let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
        }
        out
    }
}

pub fn load_landmarks(path: impl AsRef<Path>) -> Result<LandmarkSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    LandmarkSet::parse(label, &text)
}

pub fn save_landmarks(set: &LandmarkSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, set.to_text()).map_err(|e| Error::io(path, e))
}
