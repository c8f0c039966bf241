use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    Ply,
    Xyz,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("ply") => Ok(CloudFormat::Ply),
            Some("xyz") => Ok(CloudFormat::Xyz),
            _ => Err(Error::Config(format!(
                "{}: expected a .ply or .xyz file",
                path.display()
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            CloudFormat::Ply => "ply",
            CloudFormat::Xyz => "xyz",
        }
    }
}

/// Partition colours, indexed by prior number modulo 16.
pub const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [128, 0, 0],
    [170, 255, 195],
    [0, 0, 128],
];

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        self.inner.next().map(|(i, l)| (i + 1, l.trim()))
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

fn number(lines: &Lines<'_>, line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| lines.err(line, format!("`{tok}` is not a finite number")))
}

fn parse_xyz(path: &Path, text: &str) -> Result<Vec<Point>> {
    let mut lines = Lines {
        path,
        inner: text.lines().enumerate(),
    };
    let mut points = Vec::new();
    while let Some((no, line)) = lines.next() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(lines.err(no, format!("expected 3 coordinates, found {}", toks.len())));
        }
        points.push([
            number(&lines, no, toks[0])?,
            number(&lines, no, toks[1])?,
            number(&lines, no, toks[2])?,
        ]);
    }
    Ok(points)
}

fn parse_ply(path: &Path, text: &str) -> Result<Vec<Point>> {
    let mut lines = Lines {
        path,
        inner: text.lines().enumerate(),
    };
    match lines.next() {
        Some((_, "ply")) => {}
        Some((no, _)) => return Err(lines.err(no, "missing `ply` magic line")),
        None => return Err(lines.err(1, "empty file")),
    }
    let mut count: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    let mut header_end = 0;
    while let Some((no, line)) = lines.next() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(lines.err(no, format!("unsupported format `{other}`, only ascii")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(
                        n.parse()
                            .map_err(|_| lines.err(no, format!("bad vertex count `{n}`")))?,
                    );
                } else if count.is_none() {
                    return Err(lines.err(no, "vertex element must come first"));
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(lines.err(no, "list properties on vertices are not supported"))
            }
            ["property", _ty, name] => {
                if in_vertex {
                    props.push(name.to_string());
                }
            }
            ["property", ..] => {}
            ["end_header"] => {
                header_end = no;
                break;
            }
            _ => return Err(lines.err(no, format!("unexpected header line `{line}`"))),
        }
    }
    if header_end == 0 {
        return Err(lines.err(text.lines().count().max(1), "missing `end_header`"));
    }
    let count = count.ok_or_else(|| lines.err(header_end, "no vertex element"))?;
    let col = |axis: &str| {
        props
            .iter()
            .position(|p| p == axis)
            .ok_or_else(|| lines.err(header_end, format!("vertex property `{axis}` is missing")))
    };
    let (cx, cy, cz) = (col("x")?, col("y")?, col("z")?);
    let mut points = Vec::with_capacity(count);
    while points.len() < count {
        let Some((no, line)) = lines.next() else {
            return Err(lines.err(
                header_end + points.len() + 1,
                format!(
                    "vertex list truncated: expected {count}, found {}",
                    points.len()
                ),
            ));
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < props.len() {
            return Err(lines.err(
                no,
                format!("expected {} values, found {}", props.len(), toks.len()),
            ));
        }
        points.push([
            number(&lines, no, toks[cx])?,
            number(&lines, no, toks[cy])?,
            number(&lines, no, toks[cz])?,
        ]);
    }
    Ok(points)
}

/// Reads an ASCII PLY or whitespace-separated XYZ file.
pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let format = CloudFormat::from_path(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let points = match format {
        CloudFormat::Ply => parse_ply(path, &text)?,
        CloudFormat::Xyz => parse_xyz(path, &text)?,
    };
    if points.is_empty() {
        return Err(Error::EmptyInput("point-cloud file"));
    }
    Ok(PointCloud::new(points))
}

/// Writes `cloud` with 9 significant digits per coordinate. PLY output can
/// colour points by partition; XYZ never carries colour.
pub fn save_cloud(
    cloud: &PointCloud,
    path: &Path,
    format: CloudFormat,
    partition_colors: bool,
) -> Result<()> {
    if !cloud.is_finite() {
        return Err(Error::Domain(
            "cannot save a cloud with non-finite coordinates".into(),
        ));
    }
    let mut out = String::new();
    let colors = match (format, partition_colors, &cloud.partition_of) {
        (CloudFormat::Ply, true, Some(parts)) => Some(parts),
        _ => None,
    };
    if format == CloudFormat::Ply {
        out.push_str("ply\nformat ascii 1.0\n");
        let _ = writeln!(out, "element vertex {}", cloud.len());
        out.push_str("property float x\nproperty float y\nproperty float z\n");
        if colors.is_some() {
            out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
        }
        out.push_str("end_header\n");
    }
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(out, "{:.8e} {:.8e} {:.8e}", p[0], p[1], p[2]);
        if let Some(parts) = colors {
            let [r, g, b] = PALETTE[parts[i] % PALETTE.len()];
            let _ = write!(out, " {r} {g} {b}");
        }
        out.push('\n');
    }
    let tmp: PathBuf = path.with_extension(format!("{}.tmp", format.extension()));
    fs::write(&tmp, out).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
