//! File formats: tensor CSVs with a shape header, dataset directories,
//! binary draw files with a JSON sidecar, and plot-ready CSVs.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{acf, hpd_region, quantile, ChainSummary};
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::sampler::{ChainConfig, Draw, PosteriorDraws};
use crate::simulation::Truth;
use crate::tensor::Tensor;

const SHAPE_PREFIX: &str = "# shape:";
pub const DRAWS_BIN: &str = "draws.bin";
pub const DRAWS_SIDECAR: &str = "draws.json";
pub const DRAWS_FORMAT: &str = "msmetr-draws";
pub const HPD_LEVEL: f64 = 0.9;
pub const ACF_MAX_LAG: usize = 30;
const ELLIPSE_POINTS: usize = 64;

/// 17 significant digits, enough for a bit-exact round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse(format!("{what}: `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("{what}: non-finite entry `{field}`")));
    }
    Ok(v)
}

fn parse_shape(line: &str) -> Result<Vec<usize>> {
    let rest = line
        .strip_prefix(SHAPE_PREFIX)
        .ok_or_else(|| Error::Parse(format!("expected `{SHAPE_PREFIX} p1,...,pM`, found `{line}`")))?;
    let shape: Vec<usize> = rest
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| Error::Parse(format!("bad shape entry `{s}`"))))
        .collect::<Result<_>>()?;
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Parse(format!("degenerate shape {shape:?}")));
    }
    Ok(shape)
}

/// A sequence of same-shape tensors: the shape header, then one line of
/// flat first-mode-fastest data per tensor.
pub fn write_tensors(w: &mut impl Write, tensors: &[Tensor]) -> Result<()> {
    let Some(first) = tensors.first() else {
        return Err(Error::Parameter("no tensors to write".into()));
    };
    let shape: Vec<String> = first.shape().iter().map(ToString::to_string).collect();
    writeln!(w, "{SHAPE_PREFIX} {}", shape.join(","))?;
    for t in tensors {
        if t.shape() != first.shape() {
            return Err(Error::Dimension(format!("shape {:?} among tensors of shape {:?}", t.shape(), first.shape())));
        }
        let line: Vec<String> = t.data().iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_tensors(r: impl Read) -> Result<Vec<Tensor>> {
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty tensor file".into()))??;
    let shape = parse_shape(header.trim())?;
    let len: usize = shape.iter().product();
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let data: Vec<f64> = line.split(',').map(|f| parse_f64(f, &format!("tensor row {i}"))).collect::<Result<_>>()?;
        if data.len() != len {
            return Err(Error::Dimension(format!("tensor row {i} has {} entries, shape {shape:?} needs {len}", data.len())));
        }
        out.push(Tensor::new(shape.clone(), data)?);
    }
    Ok(out)
}

pub fn save_tensors(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensors(&mut w, tensors)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<Tensor>> {
    read_tensors(File::open(path).map_err(|e| with_path(e, path))?)
}

pub fn save_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    save_tensors(path, std::slice::from_ref(tensor))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let mut v = load_tensors(path)?;
    if v.len() != 1 {
        return Err(Error::Dimension(format!("{} holds {} tensors, expected one", path.display(), v.len())));
    }
    Ok(v.remove(0))
}

fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Header plus rows of a plain CSV table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Parse(e.to_string()))?).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name).ok_or_else(|| Error::Parse(format!("missing column `{name}`")))?;
        self.rows.iter().map(|r| parse_f64(&r[c], name)).collect()
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Reads a headed CSV, rejecting ragged rows.
pub fn read_table(r: impl Read) -> Result<Table> {
    let mut rd = csv::ReaderBuilder::new().flexible(false).from_reader(r);
    let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let rows = rd
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()).map_err(csv_err))
        .collect::<Result<_>>()?;
    Ok(Table { header, rows })
}

pub fn load_table(path: &Path) -> Result<Table> {
    read_table(File::open(path).map_err(|e| with_path(e, path))?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| with_path(e, path))
}

/// Responses file name inside a dataset directory.
pub const RESPONSES: &str = "y.csv";
/// Covariates shared by every equation.
pub const SHARED_COVARIATES: &str = "x.csv";

pub fn covariate_file(l: usize) -> String {
    format!("x{l}.csv")
}

/// Writes `y.csv` (`T × N`, headed `y0,...`) and either `x.csv` or one
/// `x{ℓ}.csv` per equation.
pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| with_path(e, dir))?;
    let table = Table {
        header: (0..data.n()).map(|l| format!("y{l}")).collect(),
        rows: data.response_rows().iter().map(|r| r.iter().map(|v| fmt_f64(*v)).collect()).collect(),
    };
    write_text(&dir.join(RESPONSES), &table.to_csv()?)?;
    if data.is_shared() {
        save_tensors(&dir.join(SHARED_COVARIATES), data.x(0))?;
    } else {
        for l in 0..data.n() {
            save_tensors(&dir.join(covariate_file(l)), data.x(l))?;
        }
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let table = load_table(&dir.join(RESPONSES))?;
    let n = table.header.len();
    let rows: Vec<Vec<f64>> = table
        .rows
        .iter()
        .enumerate()
        .map(|(t, r)| r.iter().map(|f| parse_f64(f, &format!("{RESPONSES} row {t}"))).collect())
        .collect::<Result<_>>()?;
    let shared = dir.join(SHARED_COVARIATES);
    let covariates: Vec<Arc<Vec<Tensor>>> = if shared.exists() {
        let xs = Arc::new(load_tensors(&shared)?);
        vec![xs; n]
    } else {
        (0..n).map(|l| load_tensors(&dir.join(covariate_file(l))).map(Arc::new)).collect::<Result<_>>()?
    };
    Dataset::new(&rows, covariates)
}

pub fn save_truth(dir: &Path, truth: &Truth) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| with_path(e, dir))?;
    write_text(&dir.join("truth.json"), &serde_json::to_string_pretty(truth)?)?;
    for (k, c) in truth.coefficients.iter().enumerate() {
        save_tensor(&dir.join(format!("truth_coef{k}.csv")), c)?;
    }
    let path = Table {
        header: vec!["t".into(), "state".into()],
        rows: truth.path.iter().enumerate().map(|(t, s)| vec![t.to_string(), s.to_string()]).collect(),
    };
    write_text(&dir.join("truth_path.csv"), &path.to_csv()?)
}

pub fn load_truth(dir: &Path) -> Result<Truth> {
    let path = dir.join("truth.json");
    Ok(serde_json::from_str(&fs::read_to_string(&path).map_err(|e| with_path(e, &path))?)?)
}

/// Layout of `draws.bin`: little-endian `f64` records of `record_len`
/// values, fields in the listed order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawsSidecar {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub k: usize,
    pub rank: usize,
    pub t: usize,
    pub shapes: Vec<Vec<usize>>,
    pub fields: Vec<(String, usize)>,
    pub record_len: usize,
    pub count: usize,
    pub config: ChainConfig,
    pub smoothed_mean: Vec<Vec<f64>>,
    pub outcome_mse: Vec<f64>,
    pub zeta_acceptance: f64,
}

fn field_layout(n: usize, k: usize, rank: usize, t: usize, shapes: &[Vec<usize>]) -> Vec<(String, usize)> {
    let mut f = vec![("sweep".to_string(), 1)];
    for (l, s) in shapes.iter().enumerate() {
        for r in 0..k {
            f.push((format!("coef[{l}][{r}]"), s.iter().product()));
        }
    }
    f.push(("mu".into(), n * k));
    f.push(("noise_var".into(), n * k));
    f.push(("trans".into(), k * k));
    f.push(("zeta".into(), n * k * rank));
    f.push(("tau".into(), n * k));
    f.push(("path".into(), t));
    f
}

fn encode(draw: &Draw) -> Vec<f64> {
    let mut v = vec![draw.sweep as f64];
    for row in &draw.coefficients {
        for c in row {
            v.extend_from_slice(c.data());
        }
    }
    v.extend(draw.mu.iter().flatten());
    v.extend(draw.noise_var.iter().flatten());
    v.extend(draw.trans.iter().flatten());
    v.extend(draw.zeta.iter().flatten().flatten());
    v.extend(draw.tau.iter().flatten());
    v.extend(draw.path.iter().map(|s| *s as f64));
    v
}

fn decode(v: &[f64], side: &DrawsSidecar) -> Result<Draw> {
    let (n, k, rank) = (side.n, side.k, side.rank);
    let mut pos = 0;
    let mut take = |len: usize| {
        let s = &v[pos..pos + len];
        pos += len;
        s
    };
    let sweep = take(1)[0] as usize;
    let mut coefficients = Vec::with_capacity(n);
    for shape in &side.shapes {
        let len = shape.iter().product();
        coefficients.push((0..k).map(|_| Tensor::new(shape.clone(), take(len).to_vec())).collect::<Result<Vec<_>>>()?);
    }
    let table = |s: &[f64]| -> Vec<Vec<f64>> { s.chunks(k).map(<[f64]>::to_vec).collect() };
    let mu = table(take(n * k));
    let noise_var = table(take(n * k));
    let trans = table(take(k * k));
    let zeta = take(n * k * rank).chunks(k * rank).map(|e| e.chunks(rank).map(<[f64]>::to_vec).collect()).collect();
    let tau = table(take(n * k));
    let path = take(side.t).iter().map(|s| *s as usize).collect();
    Ok(Draw { sweep, coefficients, mu, noise_var, trans, path, zeta, tau })
}

/// Appends draws to `draws.bin`; `finish` writes the sidecar.
pub struct DrawWriter {
    dir: PathBuf,
    out: BufWriter<File>,
    side: DrawsSidecar,
}

impl DrawWriter {
    pub fn create(dir: &Path, template: &PosteriorDraws) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| with_path(e, dir))?;
        let fields = field_layout(template.n, template.k, template.rank, template.t, &template.shapes);
        let record_len = fields.iter().map(|f| f.1).sum();
        let side = DrawsSidecar {
            format: DRAWS_FORMAT.into(),
            version: 1,
            n: template.n,
            k: template.k,
            rank: template.rank,
            t: template.t,
            shapes: template.shapes.clone(),
            fields,
            record_len,
            count: 0,
            config: template.config.clone(),
            smoothed_mean: vec![],
            outcome_mse: vec![],
            zeta_acceptance: template.zeta_acceptance,
        };
        let path = dir.join(DRAWS_BIN);
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(&path).map_err(|e| with_path(e, &path))?;
        Ok(DrawWriter { dir: dir.to_path_buf(), out: BufWriter::new(file), side })
    }

    pub fn append(&mut self, draw: &Draw) -> Result<()> {
        let rec = encode(draw);
        if rec.len() != self.side.record_len {
            return Err(Error::Dimension(format!("draw encodes to {} values, layout has {}", rec.len(), self.side.record_len)));
        }
        for v in rec {
            self.out.write_all(&v.to_le_bytes())?;
        }
        self.side.count += 1;
        Ok(())
    }

    pub fn finish(mut self, draws: &PosteriorDraws) -> Result<()> {
        self.out.flush()?;
        self.side.smoothed_mean = draws.smoothed_mean.clone();
        self.side.outcome_mse = draws.outcome_mse.clone();
        self.side.zeta_acceptance = draws.zeta_acceptance;
        write_text(&self.dir.join(DRAWS_SIDECAR), &serde_json::to_string_pretty(&self.side)?)
    }
}

pub fn save_draws(dir: &Path, draws: &PosteriorDraws) -> Result<()> {
    let mut w = DrawWriter::create(dir, draws)?;
    for d in &draws.draws {
        w.append(d)?;
    }
    w.finish(draws)
}

pub fn load_draws(dir: &Path) -> Result<PosteriorDraws> {
    let sp = dir.join(DRAWS_SIDECAR);
    let side: DrawsSidecar = serde_json::from_str(&fs::read_to_string(&sp).map_err(|e| with_path(e, &sp))?)?;
    if side.format != DRAWS_FORMAT {
        return Err(Error::Parse(format!("sidecar format `{}`", side.format)));
    }
    let expected = field_layout(side.n, side.k, side.rank, side.t, &side.shapes);
    if expected != side.fields {
        return Err(Error::Parse("sidecar field layout is inconsistent with its dimensions".into()));
    }
    let bp = dir.join(DRAWS_BIN);
    let bytes = fs::read(&bp).map_err(|e| with_path(e, &bp))?;
    let rec_bytes = side.record_len * 8;
    if bytes.len() != rec_bytes * side.count {
        return Err(Error::Parse(format!("{} bytes for {} records of {rec_bytes}", bytes.len(), side.count)));
    }
    let draws = bytes
        .chunks_exact(rec_bytes)
        .map(|rec| {
            let v: Vec<f64> = rec.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
            decode(&v, &side)
        })
        .collect::<Result<_>>()?;
    Ok(PosteriorDraws {
        config: side.config,
        n: side.n,
        k: side.k,
        rank: side.rank,
        t: side.t,
        shapes: side.shapes,
        draws,
        smoothed_mean: side.smoothed_mean,
        outcome_mse: side.outcome_mse,
        zeta_acceptance: side.zeta_acceptance,
    })
}

/// Named scalar traces of every stored draw.
pub fn scalar_traces(draws: &PosteriorDraws) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    for l in 0..draws.n {
        for k in 0..draws.k {
            out.push((format!("mu[{l}][{k}]"), draws.draws.iter().map(|d| d.mu[l][k]).collect()));
            out.push((format!("sigma2[{l}][{k}]"), draws.draws.iter().map(|d| d.noise_var[l][k]).collect()));
            out.push((format!("tau[{l}][{k}]"), draws.draws.iter().map(|d| d.tau[l][k]).collect()));
        }
    }
    if draws.k > 1 {
        for i in 0..draws.k {
            for j in 0..draws.k {
                out.push((format!("trans[{i}][{j}]"), draws.draws.iter().map(|d| d.trans[i][j]).collect()));
            }
        }
    }
    out
}

/// Posterior mean, sd and 5/50/95% quantiles of every scalar and every
/// coefficient entry.
pub fn posterior_csv(draws: &PosteriorDraws) -> Result<String> {
    let mut series = scalar_traces(draws);
    for l in 0..draws.n {
        for k in 0..draws.k {
            let len: usize = draws.shapes[l].iter().product();
            for e in 0..len {
                series.push((format!("B[{l}][{k}][{e}]"), draws.coefficient_series(l, k, e)));
            }
        }
    }
    let mut rows = Vec::with_capacity(series.len());
    for (name, s) in series {
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let sd = if s.len() > 1 { (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        rows.push(vec![
            name,
            fmt_f64(mean),
            fmt_f64(sd),
            fmt_f64(quantile(&s, 0.05)?),
            fmt_f64(quantile(&s, 0.5)?),
            fmt_f64(quantile(&s, 0.95)?),
        ]);
    }
    Table { header: ["parameter", "mean", "sd", "q05", "q50", "q95"].map(String::from).to_vec(), rows }.to_csv()
}

pub fn trace_csv(draws: &PosteriorDraws) -> Result<String> {
    let traces = scalar_traces(draws);
    let mut header = vec!["sweep".to_string()];
    header.extend(traces.iter().map(|t| t.0.clone()));
    let rows = draws
        .draws
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut r = vec![d.sweep.to_string()];
            r.extend(traces.iter().map(|t| fmt_f64(t.1[i])));
            r
        })
        .collect();
    Table { header, rows }.to_csv()
}

/// ACF bars for lags `1..=ACF_MAX_LAG`; constant series are skipped.
pub fn acf_csv(draws: &PosteriorDraws) -> Result<String> {
    let lags: Vec<usize> = (1..=ACF_MAX_LAG).collect();
    let mut rows = Vec::new();
    for (name, s) in scalar_traces(draws) {
        if let Ok(values) = acf(&s, &lags) {
            for (h, v) in lags.iter().zip(values) {
                rows.push(vec![name.clone(), h.to_string(), fmt_f64(v)]);
            }
        }
    }
    Table { header: ["series", "lag", "acf"].map(String::from).to_vec(), rows }.to_csv()
}

pub fn smoothed_csv(draws: &PosteriorDraws, true_path: Option<&[usize]>) -> Result<String> {
    let mut header = vec!["t".to_string()];
    header.extend((0..draws.k).map(|k| format!("p{k}")));
    header.push("map".into());
    if true_path.is_some() {
        header.push("truth".into());
    }
    let map = draws.map_path();
    let rows = draws
        .smoothed_mean
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let mut r = vec![t.to_string()];
            r.extend(p.iter().map(|v| fmt_f64(*v)));
            r.push(map[t].to_string());
            if let Some(tp) = true_path {
                r.push(tp.get(t).map_or_else(String::new, ToString::to_string));
            }
            r
        })
        .collect();
    Table { header, rows }.to_csv()
}

/// Regime-0 against regime-1 posterior means of equation `l`'s entries,
/// with 90% HPD ellipses: `(scatter.csv, ellipse.csv)`.
pub fn scatter_csvs(draws: &PosteriorDraws, l: usize) -> Result<(String, String)> {
    if draws.k < 2 || l >= draws.n {
        return Err(Error::Unsupported("scatter output needs two regimes".into()));
    }
    let len: usize = draws.shapes[l].iter().product();
    let mut scatter = Vec::with_capacity(len);
    let mut ellipse = Vec::new();
    for e in 0..len {
        let a = draws.coefficient_series(l, 0, e);
        let b = draws.coefficient_series(l, 1, e);
        let pairs: Vec<(f64, f64)> = a.into_iter().zip(b).collect();
        let hpd = hpd_region(&pairs, HPD_LEVEL)?;
        scatter.push(vec![e.to_string(), fmt_f64(hpd.mean[0]), fmt_f64(hpd.mean[1]), hpd.intersects_diagonal.to_string()]);
        for (i, p) in hpd.boundary(ELLIPSE_POINTS).iter().enumerate() {
            ellipse.push(vec![e.to_string(), i.to_string(), fmt_f64(p[0]), fmt_f64(p[1])]);
        }
    }
    Ok((
        Table { header: ["entry", "regime0", "regime1", "hpd_meets_diagonal"].map(String::from).to_vec(), rows: scatter }.to_csv()?,
        Table { header: ["entry", "point", "x", "y"].map(String::from).to_vec(), rows: ellipse }.to_csv()?,
    ))
}

pub fn outcome_mse_csv(draws: &PosteriorDraws) -> Result<String> {
    let rows = draws.outcome_mse.iter().enumerate().map(|(i, v)| vec![(i + 1).to_string(), fmt_f64(*v)]).collect();
    Table { header: ["sweep", "outcome_mse"].map(String::from).to_vec(), rows }.to_csv()
}

/// Writes the summary JSON and every plot-ready CSV of a chain into `dir`.
/// Returns the file names written.
pub fn write_fit_outputs(dir: &Path, draws: &PosteriorDraws, summary: &ChainSummary, truth: Option<&Truth>) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| with_path(e, dir))?;
    let mut files = vec![
        ("summary.json".to_string(), serde_json::to_string_pretty(summary)?),
        ("posterior.csv".to_string(), posterior_csv(draws)?),
        ("trace.csv".to_string(), trace_csv(draws)?),
        ("acf.csv".to_string(), acf_csv(draws)?),
        ("smoothed.csv".to_string(), smoothed_csv(draws, truth.map(|t| t.path.as_slice()))?),
        ("outcome_mse.csv".to_string(), outcome_mse_csv(draws)?),
    ];
    for l in 0..draws.n {
        for (k, c) in draws.mean_coefficients()[l].iter().enumerate() {
            let mut buf = Vec::new();
            write_tensors(&mut buf, std::slice::from_ref(c))?;
            files.push((format!("coef_mean_eq{l}_k{k}.csv"), String::from_utf8(buf).expect("ascii")));
        }
    }
    if draws.k >= 2 {
        let (s, e) = scatter_csvs(draws, 0)?;
        files.push(("scatter.csv".into(), s));
        files.push(("ellipse.csv".into(), e));
    }
    for (name, body) in &files {
        write_text(&dir.join(name), body)?;
    }
    Ok(files.into_iter().map(|f| f.0).collect())
}
