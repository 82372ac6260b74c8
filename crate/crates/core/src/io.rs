//! File formats: SAGD-TF tensor files, CSV tables, PGM input, SVG scatter
//! plots and network checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::diffusion::DiffusionSchedule;
use crate::error::{Result, SagdError};
use crate::flow::FieldSample;
use crate::nn::{Activation, DenseNet, NetSpec};
use crate::scalar::Real;
use crate::tensor::TensorField;

pub const TENSOR_MAGIC: &[u8; 4] = b"SAGD";
pub const TENSOR_VERSION: u8 = 1;
const DTYPE_F32: u8 = 0;

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(SagdError::Format(msg.into()))
}

/// Writes `x` as a SAGD-TF v1 stream. Values are stored as `f32`.
pub fn write_tensor<R: Real, W: Write>(mut out: W, x: &TensorField<R>) -> Result<()> {
    if x.shape().len() > u8::MAX as usize {
        return format_err(format!("{} dimensions do not fit the header", x.shape().len()));
    }
    let mut buf = Vec::with_capacity(8 + 4 * x.shape().len() + 4 * x.len());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&[TENSOR_VERSION, DTYPE_F32, x.shape().len() as u8]);
    for &d in x.shape() {
        let d = u32::try_from(d).or_else(|_| format_err(format!("dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in x.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<R: Real, S: Read>(mut input: S) -> Result<TensorField<R>> {
    let mut head = [0u8; 7];
    input.read_exact(&mut head).or_else(|_| format_err("truncated tensor header"))?;
    if &head[..4] != TENSOR_MAGIC {
        return format_err("missing SAGD magic");
    }
    if head[4] != TENSOR_VERSION {
        return format_err(format!("unsupported tensor version {}", head[4]));
    }
    if head[5] != DTYPE_F32 {
        return format_err(format!("unsupported dtype {}", head[5]));
    }
    let ndim = head[6] as usize;
    if ndim == 0 {
        return format_err("tensor has no dimensions");
    }
    let mut dims = vec![0u8; 4 * ndim];
    input.read_exact(&mut dims).or_else(|_| format_err("truncated dimension list"))?;
    let shape: Vec<usize> = dims.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| SagdError::Format(format!("shape {shape:?} overflows")))?;
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    if payload.len() != count {
        return format_err(format!("payload has {} bytes, shape {shape:?} needs {count}", payload.len()));
    }
    let data = payload.chunks_exact(4).map(|c| R::of(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect();
    TensorField::new(shape, data)
}

pub fn save_tensor<R: Real>(path: impl AsRef<Path>, x: &TensorField<R>) -> Result<()> {
    write_tensor(std::io::BufWriter::new(fs::File::create(path)?), x)
}

pub fn load_tensor<R: Real>(path: impl AsRef<Path>) -> Result<TensorField<R>> {
    read_tensor(std::io::BufReader::new(fs::File::open(path)?))
}

/// A CSV cell. Floats are printed with 17 significant digits.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Self::Float(v) => format_float(*v),
            Self::Int(v) => v.to_string(),
            Self::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Self::Float(v)
    }
}

impl From<f32> for Cell {
    fn from(v: f32) -> Self {
        Self::Float(v as f64)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Self::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Self::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Self::Int(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Self::Text(v.to_string())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Self::Text(v.to_owned())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Self::Text(v)
    }
}

/// Scientific notation with 17 significant digits, enough to round-trip
/// any `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// An in-memory table with a fixed header.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(SagdError::ShapeMismatch(format!(
                "row has {} cells, header has {}",
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| SagdError::Format(e.to_string());
        w.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(fs::File::create(path)?)
    }
}

/// Reads a binary PGM (P5, 8-bit) image as a `(1, 1, h, w)` field with
/// pixel `p` mapped to `2p/maxval − 1`, which is `p/127.5 − 1` for the usual
/// `maxval = 255`.
pub fn read_pgm<R: Real>(bytes: &[u8]) -> Result<TensorField<R>> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return format_err("truncated PGM header");
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return format_err("not a binary PGM (P5) image");
    }
    let mut number = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse().or_else(|_| format_err(format!("bad PGM {what}: {t:?}")))
    };
    let (w, h, maxval) = (number("width")?, number("height")?, number("maxval")?);
    if w == 0 || h == 0 {
        return format_err("PGM image is empty");
    }
    if maxval == 0 || maxval > 255 {
        return format_err(format!("only 8-bit PGM is supported, maxval {maxval}"));
    }
    let start = pos + 1;
    let pixels = bytes.get(start..start + w * h).ok_or_else(|| SagdError::Format("truncated PGM payload".into()))?;
    let scale = 2.0 / maxval as f64;
    TensorField::new(vec![1, 1, h, w], pixels.iter().map(|&p| R::of(p as f64 * scale - 1.0)).collect())
}

pub fn load_pgm<R: Real>(path: impl AsRef<Path>) -> Result<TensorField<R>> {
    read_pgm(&fs::read(path)?)
}

/// One panel of a scatter plot.
#[derive(Clone, Debug, PartialEq)]
pub struct ScatterPanel {
    pub title: String,
    pub points: Vec<[f64; 2]>,
    pub arrows: Vec<FieldSample<f64>>,
}

/// Side-by-side scatter panels sharing the square `bounds`
/// `[(x_lo, x_hi), (y_lo, y_hi)]`.
pub fn scatter_svg(panels: &[ScatterPanel], bounds: [(f64, f64); 2]) -> Result<String> {
    let [(x0, x1), (y0, y1)] = bounds;
    if !(x1 > x0 && y1 > y0) {
        return Err(SagdError::InvalidArgument(format!("empty plot bounds {bounds:?}")));
    }
    const SIZE: f64 = 240.0;
    const PAD: f64 = 20.0;
    let width = panels.len().max(1) as f64 * (SIZE + PAD) + PAD;
    let height = SIZE + 2.0 * PAD + 12.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, panel) in panels.iter().enumerate() {
        let left = PAD + k as f64 * (SIZE + PAD);
        let top = PAD + 12.0;
        let px = |x: f64| left + (x - x0) / (x1 - x0) * SIZE;
        let py = |y: f64| top + (y1 - y) / (y1 - y0) * SIZE;
        let _ = writeln!(s, r#"<g>"#);
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{top}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black" stroke-width="0.5"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" font-family="sans-serif" text-anchor="middle">{}</text>"#,
            left + SIZE / 2.0,
            PAD + 4.0,
            escape(&panel.title)
        );
        let longest =
            panel.arrows.iter().map(|a| a.score.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
        let spacing = SIZE / (panel.arrows.len() as f64).sqrt().max(1.0);
        for a in &panel.arrows {
            if longest == 0.0 {
                continue;
            }
            let k = 0.8 * spacing / longest;
            let (sx, sy) = (px(a.point[0]), py(a.point[1]));
            let _ = writeln!(
                s,
                r#"<line x1="{sx:.2}" y1="{sy:.2}" x2="{:.2}" y2="{:.2}" stroke="steelblue" stroke-width="0.7"/>"#,
                sx + k * a.score[0],
                sy - k * a.score[1]
            );
        }
        for p in &panel.points {
            if p[0] < x0 || p[0] > x1 || p[1] < y0 || p[1] > y1 {
                continue;
            }
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="0.8" fill="black" fill-opacity="0.5"/>"#,
                px(p[0]),
                py(p[1])
            );
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const MANIFEST: &str = "manifest.txt";

/// Writes `net` into `dir` as one tensor file per weight and bias plus a
/// manifest recording the architecture and layer shapes.
pub fn save_checkpoint<R: Real>(dir: impl AsRef<Path>, net: &DenseNet<R>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let spec = net.spec();
    let mut m = String::new();
    let _ = writeln!(m, "format=sagd-checkpoint-1");
    let _ = writeln!(m, "dim={}", spec.dim);
    let _ = writeln!(m, "embed={}", spec.embed);
    let _ = writeln!(m, "hidden={}", spec.hidden);
    let _ = writeln!(m, "activation={}", activation_name(spec.activation));
    let _ = writeln!(m, "skip={}", spec.skip);
    let _ = writeln!(m, "steps={}", net.steps());
    for (i, t) in net.tensors().iter().enumerate() {
        let name = tensor_name(i);
        save_tensor(dir.join(&name), t)?;
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(m, "tensor={name}:{}", dims.join("x"));
    }
    fs::write(dir.join(MANIFEST), m)?;
    Ok(())
}

/// Rebuilds a network saved by [`save_checkpoint`] for the schedule it was
/// trained with. Parameters pass through `f32`.
pub fn load_checkpoint<R: Real>(dir: impl AsRef<Path>, sched: &DiffusionSchedule<R>) -> Result<DenseNet<R>> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let mut fields = std::collections::BTreeMap::new();
    let mut tensors = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| SagdError::Format(format!("bad manifest line {line:?}")))?;
        if k == "tensor" {
            let (name, dims) = v.split_once(':').ok_or_else(|| SagdError::Format(format!("bad tensor entry {v:?}")))?;
            let t: TensorField<R> = load_tensor(dir.join(name))?;
            let declared: Vec<usize> = dims
                .split('x')
                .map(|d| d.parse().or_else(|_| format_err(format!("bad dimension in {dims:?}"))))
                .collect::<Result<_>>()?;
            if t.shape() != declared.as_slice() {
                return format_err(format!("{name} has shape {:?}, manifest says {declared:?}", t.shape()));
            }
            tensors.push(t);
        } else {
            fields.insert(k.to_owned(), v.to_owned());
        }
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| SagdError::Format(format!("manifest lacks {k}")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().or_else(|_| format_err(format!("bad {k} in manifest"))) };
    if get("format")? != "sagd-checkpoint-1" {
        return format_err("unknown checkpoint format");
    }
    let activation = match get("activation")?.as_str() {
        "silu" => Activation::Silu,
        "identity" => Activation::Identity,
        other => return format_err(format!("unknown activation {other:?}")),
    };
    let skip = get("skip")?.parse().or_else(|_| format_err("bad skip flag in manifest"))?;
    let steps = num("steps")?;
    if steps != sched.steps() {
        return Err(SagdError::ShapeMismatch(format!("checkpoint has {steps} steps, schedule has {}", sched.steps())));
    }
    let spec = NetSpec { dim: num("dim")?, embed: num("embed")?, hidden: num("hidden")?, activation, skip };
    DenseNet::from_tensors(spec, sched, &tensors)
}

fn tensor_name(i: usize) -> String {
    format!("layer{}_{}.sagdtf", i / 2, if i.is_multiple_of(2) { "w" } else { "b" })
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Silu => "silu",
        Activation::Identity => "identity",
    }
}
