//! Text and CSV/JSON encodings of matrices, measurements, traces, coherence
//! reports and bound traces.
//!
//! Matrix text: a `rows cols` header, then one `i j re im` line per entry
//! (zero-based indices, 17 significant digits). Lines starting with `#` carry
//! `key=value` metadata. Entries that are absent read back as zero, which is
//! how sparse diagonals are stored.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use scatter_core::bounds::{BoundInputs, BoundTrace};
use scatter_core::coherence::{BoundEntry, CoherenceReport};
use scatter_core::forward::{MeasurementMatrix, SparseDiagonal};
use scatter_core::iht::ReconstructionTrace;
use scatter_core::{ComplexMatrix, C64};

use crate::error::{AppError, AppResult};

fn format_err(path: &str, message: impl Into<String>) -> AppError {
    AppError::Format {
        path: path.to_string(),
        message: message.into(),
    }
}

fn create(path: &Path) -> AppResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| AppError::io(path, e))
}

fn open(path: &Path) -> AppResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| AppError::io(path, e))
}

/// Shortest text that parses back to the same `f64`, in exponent form.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    match s {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        "nan" => Some(f64::NAN),
        _ => s.parse().ok(),
    }
}

fn write_entries<W: Write>(w: &mut W, rows: usize, cols: usize, entries: impl Iterator<Item = (usize, usize, C64)>) -> std::io::Result<()> {
    writeln!(w, "{rows} {cols}")?;
    for (i, j, z) in entries {
        writeln!(w, "{i} {j} {} {}", fmt_f64(z.re), fmt_f64(z.im))?;
    }
    Ok(())
}

pub fn write_matrix<W: Write>(w: &mut W, m: &ComplexMatrix) -> std::io::Result<()> {
    let cols = m.cols();
    write_entries(
        w,
        m.rows(),
        cols,
        m.as_slice().iter().enumerate().map(|(k, z)| (k / cols, k % cols, *z)),
    )
}

/// Matrix text with `# noise_level=` and `# seed=` headers.
pub fn write_measurement<W: Write>(w: &mut W, y: &MeasurementMatrix) -> std::io::Result<()> {
    writeln!(w, "# noise_level={}", fmt_f64(y.noise_level))?;
    match y.seed {
        Some(s) => writeln!(w, "# seed={s}")?,
        None => writeln!(w, "# seed=none")?,
    }
    write_matrix(w, &y.data)
}

/// Diagonal `N × N` matrix holding only its nonzero entries.
pub fn write_diagonal<W: Write>(w: &mut W, v: &SparseDiagonal) -> std::io::Result<()> {
    let n = v.dim();
    write_entries(w, n, n, v.support().iter().zip(v.values()).map(|(&i, z)| (i, i, *z)))
}

/// Parsed matrix text plus its `#` metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFile {
    pub matrix: ComplexMatrix,
    pub meta: BTreeMap<String, String>,
}

pub fn read_matrix_text<R: BufRead>(r: R, origin: &str) -> AppResult<MatrixFile> {
    let mut meta = BTreeMap::new();
    let mut shape: Option<(usize, usize)> = None;
    let mut data: Vec<C64> = Vec::new();
    let mut seen: Vec<bool> = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line.map_err(|e| AppError::io(origin, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        let at = |msg: &str| format_err(origin, format!("line {}: {msg}", ln + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        match shape {
            None => {
                let [r, c] = fields[..] else {
                    return Err(at("expected `rows cols`"));
                };
                let r: usize = r.parse().map_err(|_| at("bad row count"))?;
                let c: usize = c.parse().map_err(|_| at("bad column count"))?;
                shape = Some((r, c));
                data = vec![C64::new(0.0, 0.0); r * c];
                seen = vec![false; r * c];
            }
            Some((rows, cols)) => {
                let [i, j, re, im] = fields[..] else {
                    return Err(at("expected `i j re im`"));
                };
                let i: usize = i.parse().map_err(|_| at("bad row index"))?;
                let j: usize = j.parse().map_err(|_| at("bad column index"))?;
                if i >= rows || j >= cols {
                    return Err(at(&format!("entry ({i}, {j}) outside a {rows}x{cols} matrix")));
                }
                let re = parse_f64(re).ok_or_else(|| at("bad real part"))?;
                let im = parse_f64(im).ok_or_else(|| at("bad imaginary part"))?;
                let k = i * cols + j;
                if seen[k] {
                    return Err(at(&format!("duplicate entry ({i}, {j})")));
                }
                seen[k] = true;
                data[k] = C64::new(re, im);
            }
        }
    }
    let (rows, cols) = shape.ok_or_else(|| format_err(origin, "missing `rows cols` header"))?;
    let matrix = ComplexMatrix::from_row_major(rows, cols, data).map_err(|e| format_err(origin, e.to_string()))?;
    Ok(MatrixFile { matrix, meta })
}

pub fn measurement_from(file: MatrixFile, origin: &str) -> AppResult<MeasurementMatrix> {
    let noise_level = match file.meta.get("noise_level") {
        Some(s) => parse_f64(s).ok_or_else(|| format_err(origin, format!("bad noise_level `{s}`")))?,
        None => 0.0,
    };
    let seed = match file.meta.get("seed").map(String::as_str) {
        None | Some("none") => None,
        Some(s) => Some(s.parse().map_err(|_| format_err(origin, format!("bad seed `{s}`")))?),
    };
    Ok(MeasurementMatrix {
        data: file.matrix,
        noise_level,
        seed,
    })
}

pub fn save_matrix(path: &Path, m: &ComplexMatrix) -> AppResult<()> {
    let mut w = create(path)?;
    write_matrix(&mut w, m).and_then(|_| w.flush()).map_err(|e| AppError::io(path, e))
}

pub fn save_measurement(path: &Path, y: &MeasurementMatrix) -> AppResult<()> {
    let mut w = create(path)?;
    write_measurement(&mut w, y).and_then(|_| w.flush()).map_err(|e| AppError::io(path, e))
}

pub fn save_diagonal(path: &Path, v: &SparseDiagonal) -> AppResult<()> {
    let mut w = create(path)?;
    write_diagonal(&mut w, v).and_then(|_| w.flush()).map_err(|e| AppError::io(path, e))
}

pub fn load_matrix(path: &Path) -> AppResult<ComplexMatrix> {
    Ok(read_matrix_text(open(path)?, &path.display().to_string())?.matrix)
}

pub fn load_measurement(path: &Path) -> AppResult<MeasurementMatrix> {
    let origin = path.display().to_string();
    measurement_from(read_matrix_text(open(path)?, &origin)?, &origin)
}

pub fn load_diagonal(path: &Path) -> AppResult<SparseDiagonal> {
    let origin = path.display().to_string();
    let m = read_matrix_text(open(path)?, &origin)?.matrix;
    SparseDiagonal::from_matrix(&m).map_err(|e| format_err(&origin, e.to_string()))
}

// ---------------------------------------------------------------- traces

pub const TRACE_HEADER: [&str; 6] = ["iter", "y_err", "l1_error", "support_size", "support_indices", "values"];

fn encode_values(values: &[C64]) -> String {
    values
        .iter()
        .map(|z| format!("{};{}", fmt_f64(z.re), fmt_f64(z.im)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn decode_values(s: &str) -> Option<Vec<C64>> {
    s.split_whitespace()
        .map(|pair| {
            let (re, im) = pair.split_once(';')?;
            Some(C64::new(parse_f64(re)?, parse_f64(im)?))
        })
        .collect()
}

pub fn write_trace<W: Write>(w: W, trace: &ReconstructionTrace) -> AppResult<()> {
    let mut out = csv::Writer::from_writer(w);
    let wrap = |e: csv::Error| format_err("trace", e.to_string());
    out.write_record(TRACE_HEADER).map_err(wrap)?;
    for r in &trace.records {
        let indices = serde_json::to_string(r.v.support()).expect("indices serialize");
        out.write_record([
            r.iter.to_string(),
            fmt_f64(r.y_err),
            r.l1_error.map(fmt_f64).unwrap_or_default(),
            r.v.sparsity().to_string(),
            indices,
            encode_values(r.v.values()),
        ])
        .map_err(wrap)?;
    }
    out.flush().map_err(|e| format_err("trace", e.to_string()))
}

pub fn save_trace(path: &Path, trace: &ReconstructionTrace) -> AppResult<()> {
    write_trace(create(path)?, trace)
}

/// One parsed trace row; `dim` is not stored in the CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub y_err: f64,
    pub l1_error: Option<f64>,
    pub support: Vec<usize>,
    pub values: Vec<C64>,
}

pub fn read_trace<R: std::io::Read>(r: R, origin: &str) -> AppResult<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers().map_err(|e| format_err(origin, e.to_string()))?.clone();
    if headers.iter().ne(TRACE_HEADER) {
        return Err(format_err(origin, "unexpected trace header"));
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| format_err(origin, e.to_string()))?;
        let bad = |what: &str| format_err(origin, format!("row {}: bad {what}", k + 1));
        let support: Vec<usize> = serde_json::from_str(&rec[4]).map_err(|_| bad("support_indices"))?;
        let values = decode_values(&rec[5]).ok_or_else(|| bad("values"))?;
        let size: usize = rec[3].parse().map_err(|_| bad("support_size"))?;
        if size != support.len() || size != values.len() {
            return Err(bad("support_size"));
        }
        rows.push(TraceRow {
            iter: rec[0].parse().map_err(|_| bad("iter"))?,
            y_err: parse_f64(&rec[1]).ok_or_else(|| bad("y_err"))?,
            l1_error: match &rec[2] {
                "" => None,
                s => Some(parse_f64(s).ok_or_else(|| bad("l1_error"))?),
            },
            support,
            values,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------- coherence

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEntryJson {
    pub name: String,
    pub value: f64,
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceJson {
    pub mu_exact: f64,
    pub argmax_pair: [usize; 2],
    pub bound_chain: Vec<BoundEntryJson>,
}

impl From<&CoherenceReport> for CoherenceJson {
    fn from(r: &CoherenceReport) -> Self {
        Self {
            mu_exact: r.mu_exact,
            argmax_pair: [r.argmax_pair.0, r.argmax_pair.1],
            bound_chain: r
                .bound_chain
                .iter()
                .map(|b| BoundEntryJson {
                    name: b.name.clone(),
                    value: b.value,
                    clamped: b.clamped,
                })
                .collect(),
        }
    }
}

impl From<CoherenceJson> for CoherenceReport {
    fn from(j: CoherenceJson) -> Self {
        CoherenceReport {
            mu_exact: j.mu_exact,
            argmax_pair: (j.argmax_pair[0], j.argmax_pair[1]),
            bound_chain: j
                .bound_chain
                .into_iter()
                .map(|b| BoundEntry {
                    name: b.name,
                    value: b.value,
                    clamped: b.clamped,
                })
                .collect(),
        }
    }
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| format_err(&path.display().to_string(), e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| AppError::io(path, e))
}

pub fn save_coherence(path: &Path, report: &CoherenceReport) -> AppResult<()> {
    save_json(path, &CoherenceJson::from(report))
}

pub fn load_coherence(path: &Path) -> AppResult<CoherenceReport> {
    let j: CoherenceJson = serde_json::from_reader(open(path)?)
        .map_err(|e| format_err(&path.display().to_string(), e.to_string()))?;
    Ok(j.into())
}

// ---------------------------------------------------------------- bounds

pub const BOUND_HEADER: [&str; 4] = ["iter", "bound_l1", "rho_n", "floor"];

/// Row 0 is the starting error and has no contraction factor.
pub fn write_bound_trace<W: Write>(w: W, t: &BoundTrace) -> AppResult<()> {
    let mut out = csv::Writer::from_writer(w);
    let wrap = |e: csv::Error| format_err("bound trace", e.to_string());
    out.write_record(BOUND_HEADER).map_err(wrap)?;
    let floor = fmt_f64(t.floor);
    out.write_record(["0".to_string(), fmt_f64(t.initial), String::new(), floor.clone()])
        .map_err(wrap)?;
    for s in &t.steps {
        out.write_record([s.iter.to_string(), fmt_f64(s.bound_l1), fmt_f64(s.rho), floor.clone()])
            .map_err(wrap)?;
    }
    out.flush().map_err(|e| format_err("bound trace", e.to_string()))
}

pub fn save_bound_trace(path: &Path, t: &BoundTrace) -> AppResult<()> {
    write_bound_trace(create(path)?, t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputsJson {
    pub mu_a: f64,
    pub mu_bstar: f64,
    pub s: usize,
    pub delta: f64,
    pub gamma: f64,
    #[serde(default)]
    pub delta_n: Vec<f64>,
    #[serde(default)]
    pub gamma_n: Vec<f64>,
    pub v_inf: f64,
    pub v0_err: f64,
    #[serde(default)]
    pub noise: Vec<f64>,
    pub iterations: usize,
}

impl From<&BoundInputs> for BoundInputsJson {
    fn from(b: &BoundInputs) -> Self {
        Self {
            mu_a: b.mu_a,
            mu_bstar: b.mu_bstar,
            s: b.s,
            delta: b.delta,
            gamma: b.gamma,
            delta_n: b.delta_n.clone(),
            gamma_n: b.gamma_n.clone(),
            v_inf: b.v_inf,
            v0_err: b.v0_err,
            noise: b.noise.clone(),
            iterations: b.iterations,
        }
    }
}

impl From<BoundInputsJson> for BoundInputs {
    fn from(b: BoundInputsJson) -> Self {
        BoundInputs {
            mu_a: b.mu_a,
            mu_bstar: b.mu_bstar,
            s: b.s,
            delta: b.delta,
            gamma: b.gamma,
            delta_n: b.delta_n,
            gamma_n: b.gamma_n,
            v_inf: b.v_inf,
            v0_err: b.v0_err,
            noise: b.noise,
            iterations: b.iterations,
        }
    }
}

/// Scalar summary of a bound trace; an infinite floor is written as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub name: String,
    pub guarantee: bool,
    pub floor: Option<f64>,
    pub initial: f64,
    pub max_rho: f64,
    pub final_bound: f64,
}

impl From<&BoundTrace> for BoundSummary {
    fn from(t: &BoundTrace) -> Self {
        Self {
            name: t.name.clone(),
            guarantee: t.guarantee,
            floor: t.floor.is_finite().then_some(t.floor),
            initial: t.initial,
            max_rho: t.max_rho(),
            final_bound: t.bound_at(t.steps.len()),
        }
    }
}
