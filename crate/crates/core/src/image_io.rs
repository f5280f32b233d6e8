//! Grayscale NetPBM images, dataset manifests and context crops.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("zero dimension {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!("{} pixels for a {width}x{height} image", pixels.len())));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidImage(format!("intensity {p} outside [0, 1]")));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Sets a pixel, clamping the value into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.pixels[y * self.width + x] = value.clamp(0.0, 1.0);
    }

    /// Copies out the half-open pixel rectangle `[x1, x2) x [y1, y2)`.
    pub fn sub_image(&self, x1: usize, y1: usize, x2: usize, y2: usize) -> Result<Self> {
        if x1 >= x2 || y1 >= y2 || x2 > self.width || y2 > self.height {
            return Err(Error::BoxOutsideImage([x1 as i64, y1 as i64, x2 as i64, y2 as i64]));
        }
        let mut pixels = Vec::with_capacity((x2 - x1) * (y2 - y1));
        for y in y1..y2 {
            pixels.extend_from_slice(&self.pixels[y * self.width + x1..y * self.width + x2]);
        }
        Ok(Self { width: x2 - x1, height: y2 - y1, pixels })
    }
}

/// Integer pixel rectangle, half-open: columns `x1..x2`, rows `y1..y2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

impl PixelBox {
    pub fn new(x1: i64, y1: i64, x2: i64, y2: i64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> i64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> i64 {
        self.y2 - self.y1
    }

    fn as_array(&self) -> [i64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Intersection with `[0, width) x [0, height)`, or `None` when empty.
    pub fn clip(&self, width: usize, height: usize) -> Option<PixelBox> {
        let b = PixelBox {
            x1: self.x1.max(0),
            y1: self.y1.max(0),
            x2: self.x2.min(width as i64),
            y2: self.y2.min(height as i64),
        };
        (b.x1 < b.x2 && b.y1 < b.y2).then_some(b)
    }
}

/// Class label of a training or test image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    /// `+1.0` or `-1.0`.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl FromStr for Label {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "1" | "+1" => Ok(Label::Positive),
            "-1" => Ok(Label::Negative),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "1",
            Label::Negative => "-1",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Path as written in the manifest.
    pub path: PathBuf,
    pub label: Label,
    pub bbox: Option<PixelBox>,
}

/// Labelled image list for one binary class.
///
/// Relative entry paths are resolved against `base_dir`, the directory the
/// manifest was read from.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub class_name: String,
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn labels(&self) -> Vec<Label> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    /// Loads an entry's image, cropping to its box expanded by `expand_frac`
    /// when the entry has one.
    pub fn load_entry(&self, entry: &ManifestEntry, expand_frac: f64) -> Result<GrayImage> {
        let img = load_image(self.resolve(entry))?;
        match entry.bbox {
            Some(b) => crop_expand(&img, b, expand_frac),
            None => Ok(img),
        }
    }

    /// Writes the manifest in the line format accepted by [`read_manifest`].
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        out.push_str(&format!("# class: {}\n", self.class_name));
        for e in &self.entries {
            out.push_str(&format!("{},{}", e.path.display(), e.label));
            if let Some(b) = e.bbox {
                out.push_str(&format!(",{},{},{},{}", b.x1, b.y1, b.x2, b.y2));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Reads a NetPBM grayscale (P2/P5) or color (P3/P6) image.
///
/// Colour pixels are converted with the unweighted mean `(R + G + B) / 3`.
/// Intensities are divided by the header's maxval.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}

pub fn decode_pnm(bytes: &[u8]) -> Result<GrayImage> {
    let mut cursor = HeaderCursor { bytes, pos: 0 };
    let magic = cursor.token().ok_or_else(|| Error::MalformedHeader("missing magic number".into()))?;
    let (channels, binary) = match magic {
        b"P2" => (1, false),
        b"P5" => (1, true),
        b"P3" => (3, false),
        b"P6" => (3, true),
        other => return Err(Error::MalformedHeader(format!("unsupported magic {:?}", String::from_utf8_lossy(other)))),
    };
    let width = cursor.header_value("width")?;
    let height = cursor.header_value("height")?;
    let maxval = cursor.header_value("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader(format!("zero dimension {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedHeader(format!("maxval {maxval} out of range")));
    }
    let expected = width * height * channels;

    let samples: Vec<u32> = if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let start = cursor.pos + 1;
        let raster = bytes.get(start..).unwrap_or(&[]);
        if maxval < 256 {
            if raster.len() < expected {
                return Err(Error::TruncatedPixels { expected, found: raster.len() });
            }
            raster[..expected].iter().map(|&b| u32::from(b)).collect()
        } else {
            if raster.len() < 2 * expected {
                return Err(Error::TruncatedPixels { expected, found: raster.len() / 2 });
            }
            raster[..2 * expected].chunks_exact(2).map(|c| u32::from(u16::from_be_bytes([c[0], c[1]]))).collect()
        }
    } else {
        let mut samples = Vec::with_capacity(expected);
        while samples.len() < expected {
            match cursor.token() {
                Some(tok) => {
                    let v = std::str::from_utf8(tok)
                        .ok()
                        .and_then(|s| s.parse::<u32>().ok())
                        .ok_or_else(|| Error::InvalidImage(format!("bad sample {:?}", String::from_utf8_lossy(tok))))?;
                    samples.push(v);
                }
                None => return Err(Error::TruncatedPixels { expected, found: samples.len() }),
            }
        }
        samples
    };

    if let Some(&v) = samples.iter().find(|&&v| v as usize > maxval) {
        return Err(Error::InvalidImage(format!("sample {v} exceeds maxval {maxval}")));
    }
    let scale = maxval as f64;
    let pixels = if channels == 1 {
        samples.iter().map(|&v| v as f64 / scale).collect()
    } else {
        samples.chunks_exact(3).map(|c| (c[0] + c[1] + c[2]) as f64 / (3.0 * scale)).collect()
    };
    GrayImage::new(width, height, pixels)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    /// Next whitespace-delimited token, skipping `#` comments. Leaves `pos`
    /// on the byte right after the token.
    fn token(&mut self) -> Option<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Some(&self.bytes[start..self.pos])
    }

    fn header_value(&mut self, what: &str) -> Result<usize> {
        let tok = self.token().ok_or_else(|| Error::MalformedHeader(format!("missing {what}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::MalformedHeader(format!("bad {what} {:?}", String::from_utf8_lossy(tok))))
    }
}

/// Writes a binary PGM (P5) with maxval 255.
pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.pixels.len() + 20);
    write!(out, "P5\n{} {}\n255\n", img.width, img.height).expect("write to Vec");
    out.extend(img.pixels.iter().map(|&p| (p * 255.0).round() as u8));
    out
}

/// Crops `bbox` after growing it by `expand_frac` of its width and height
/// (half on each side), clipped to the image.
pub fn crop_expand(img: &GrayImage, bbox: PixelBox, expand_frac: f64) -> Result<GrayImage> {
    if bbox.x1 >= bbox.x2 || bbox.y1 >= bbox.y2 || bbox.clip(img.width, img.height).is_none() {
        return Err(Error::BoxOutsideImage(bbox.as_array()));
    }
    if expand_frac < 0.0 || !expand_frac.is_finite() {
        return Err(Error::Config(format!("expand fraction {expand_frac} must be >= 0")));
    }
    let dx = expand_frac * bbox.width() as f64 / 2.0;
    let dy = expand_frac * bbox.height() as f64 / 2.0;
    let grown = PixelBox {
        x1: (bbox.x1 as f64 - dx).floor() as i64,
        y1: (bbox.y1 as f64 - dy).floor() as i64,
        x2: (bbox.x2 as f64 + dx).ceil() as i64,
        y2: (bbox.y2 as f64 + dy).ceil() as i64,
    };
    let c = grown.clip(img.width, img.height).ok_or(Error::BoxOutsideImage(bbox.as_array()))?;
    img.sub_image(c.x1 as usize, c.y1 as usize, c.x2 as usize, c.y2 as usize)
}

/// Parses a manifest: one `path,label[,x1,y1,x2,y2]` per line.
///
/// Blank lines and `#` comments are skipped. A `# class: <name>` line names
/// the class; otherwise the file stem is used.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let default_name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = parse_manifest(&text, base_dir)?;
    if manifest.class_name.is_empty() {
        manifest.class_name = default_name;
    }
    Ok(manifest)
}

pub fn parse_manifest(text: &str, base_dir: PathBuf) -> Result<DatasetManifest> {
    let mut class_name = String::new();
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(name) = comment.trim().strip_prefix("class:") {
                class_name = name.trim().to_string();
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::Manifest { line: line_no, msg: "expected path,label".into() });
        }
        if fields[0].is_empty() {
            return Err(Error::Manifest { line: line_no, msg: "empty path".into() });
        }
        let label = fields[1]
            .parse::<Label>()
            .map_err(|_| Error::InvalidLabel { line: line_no, value: fields[1].to_string() })?;
        let bbox = match fields.len() {
            2 => None,
            6 => {
                let coords: Option<Vec<i64>> = fields[2..].iter().map(|f| f.parse::<i64>().ok()).collect();
                match coords.as_deref() {
                    Some(&[x1, y1, x2, y2]) if x1 >= 0 && y1 >= 0 && x1 < x2 && y1 < y2 => {
                        Some(PixelBox::new(x1, y1, x2, y2))
                    }
                    _ => return Err(Error::MalformedBox { line: line_no, value: fields[2..].join(",") }),
                }
            }
            _ => return Err(Error::MalformedBox { line: line_no, value: fields[2..].join(",") }),
        };
        entries.push(ManifestEntry { path: PathBuf::from(fields[0]), label, bbox });
    }
    Ok(DatasetManifest { class_name, base_dir, entries })
}
