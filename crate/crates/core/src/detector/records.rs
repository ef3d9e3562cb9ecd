//! Line-delimited detection records: `sequence_id,class_id,start,end,score`.

use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::window::Window;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub sequence_id: String,
    pub window: Window,
}

pub fn write_detection_records(records: &[DetectionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let w = &r.window;
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.sequence_id,
            w.class_id.unwrap_or(0),
            w.start,
            w.end,
            w.score
        );
    }
    out
}

pub fn parse_detection_records(text: &str) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 || f[0].is_empty() {
            return Err(Error::parse(i + 1, "expected sequence_id,class_id,start,end,score"));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::parse(i + 1, format!("non-numeric field {s:?}")))
        };
        let class_id = f[1]
            .parse::<usize>()
            .map_err(|_| Error::parse(i + 1, format!("bad class id {:?}", f[1])))?;
        out.push(DetectionRecord {
            sequence_id: f[0].to_string(),
            window: Window::scored(num(f[2])?, num(f[3])?, num(f[4])?, Some(class_id)),
        });
    }
    Ok(out)
}
