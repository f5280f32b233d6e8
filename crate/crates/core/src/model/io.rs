use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{EpmModel, ImageId, Part};
use crate::geometry::{Grid, PartLocation};
use crate::{Error, Result};

pub const MODEL_MAGIC: &str = "EPMMD";
pub const MODEL_VERSION: u32 = 1;

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn model_to_string(model: &EpmModel) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{MODEL_MAGIC} {MODEL_VERSION} {} {} {} {} {} {}",
        model.len(),
        model.d(),
        model.grid().s(),
        model.grid().t(),
        model.k(),
        real(model.beta())
    )
    .unwrap();
    for p in &model.parts {
        let l = &p.location;
        writeln!(out, "{} {} {} {} {}", real(l.x1), real(l.y1), real(l.x2), real(l.y2), p.source).unwrap();
        let w: Vec<String> = p.template.iter().map(|&v| real(v)).collect();
        writeln!(out, "{}", w.join(" ")).unwrap();
    }
    out
}

pub fn save_model(model: &EpmModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EpmModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text)
}

fn field<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok()).ok_or_else(|| Error::Corrupt(format!("bad or missing {what}")))
}

pub fn parse_model(text: &str) -> Result<EpmModel> {
    let mut lines = text.lines();
    let mut header = lines.next().unwrap_or("").split_whitespace();
    let magic = header.next().unwrap_or("");
    if magic != MODEL_MAGIC {
        return Err(Error::UnknownFormat(magic.to_string()));
    }
    let version: u32 = field(header.next(), "version")?;
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n: usize = field(header.next(), "part count")?;
    let d: usize = field(header.next(), "dimension")?;
    let s: usize = field(header.next(), "grid width")?;
    let t: usize = field(header.next(), "grid height")?;
    let k: usize = field(header.next(), "k")?;
    let beta: f64 = field(header.next(), "beta")?;
    let grid = Grid::new(s, t)?;

    let mut parts = Vec::with_capacity(n);
    for p in 0..n {
        let mut loc = lines.next().ok_or_else(|| Error::Corrupt(format!("missing part {p}")))?.split_whitespace();
        let x1 = field(loc.next(), "x1")?;
        let y1 = field(loc.next(), "y1")?;
        let x2 = field(loc.next(), "x2")?;
        let y2 = field(loc.next(), "y2")?;
        let source = ImageId(field(loc.next(), "source id")?);
        let location = PartLocation::new(x1, y1, x2, y2)?;
        let template = lines
            .next()
            .ok_or_else(|| Error::Corrupt(format!("missing template of part {p}")))?
            .split_whitespace()
            .map(|tok| field(Some(tok), "template value"))
            .collect::<Result<Vec<f64>>>()?;
        parts.push(Part { template, location, source });
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::Corrupt("trailing data after last part".into()));
    }
    EpmModel::new(parts, grid, d, k, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DEFAULT_BETA;

    fn sample_model() -> EpmModel {
        let g = Grid::new(5, 3).unwrap();
        let parts = vec![
            Part { template: vec![0.1, -1.0 / 3.0, 1e-300], location: g.location(0, 0, 2, 1), source: ImageId(4) },
            Part {
                template: vec![f64::MIN_POSITIVE, 2.0, -7.25],
                location: g.location(1, 1, 4, 2),
                source: ImageId(0),
            },
        ];
        EpmModel::new(parts, g, 2, 7, DEFAULT_BETA).unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        let m = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.epm");
        save_model(&m, &p).unwrap();
        assert_eq!(load_model(&p).unwrap(), m);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("EPMMD 1 2 2 5 3 7 "));
    }

    #[test]
    fn header_checks() {
        let text = model_to_string(&sample_model());
        let bad_magic = text.replacen("EPMMD", "EPMMX", 1);
        assert!(matches!(parse_model(&bad_magic), Err(Error::UnknownFormat(m)) if m == "EPMMX"));
        let bad_version = text.replacen("EPMMD 1", "EPMMD 99", 1);
        assert!(matches!(parse_model(&bad_version), Err(Error::UnsupportedVersion(99))));
        let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_model(&truncated), Err(Error::Corrupt(_))));
        let short_template = text.replacen(" -7.25", "", 1).replace("-7.2500000000000000e0", "");
        assert!(parse_model(&short_template).is_err());
    }
}
