//! File formats: headered little-endian float blobs, CSV, ASCII PGM and
//! key=value records.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::detectability::DetectabilityMap;
use crate::error::{Error, Result};
use crate::geometry::{DetectorGeometry, PoseGrid, ProjectionMatrix, ViewAngles};
use crate::phantom::{MaterialLabel, MaterialVolume};
use crate::planner::{Trajectory, TrajectoryStep, CANDIDATES};
use crate::projector::ProjectionImage;
use crate::recon::ReconVolume;
use crate::regressor::{Dataset, DatasetManifest, LayerSpec, RegressorModel, SimulationRecord, TrainingSample, OUTPUTS};

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn format_err(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {what}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_err(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn push_f32(buf: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn parse_f32s(path: &Path, bytes: &[u8], n: usize) -> Result<Vec<f64>> {
    if bytes.len() != 4 * n {
        return Err(format_err(path, format!("expected {} payload bytes, found {}", 4 * n, bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

/// Split a blob into its first line (without the newline) and the payload.
fn split_header<'a>(path: &Path, bytes: &'a [u8]) -> Result<(&'a str, &'a [u8])> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| format_err(path, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| format_err(path, "header is not ASCII"))?;
    Ok((header, &bytes[nl + 1..]))
}

fn parse<T: std::str::FromStr>(path: &Path, field: &str) -> Result<T> {
    field.parse().map_err(|_| format_err(path, format!("bad field {field:?}")))
}

fn header_fields<'a>(path: &Path, header: &'a str, magic: &str, n: usize) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.first() != Some(&magic) || fields.len() != n + 1 {
        return Err(format_err(path, format!("expected a `{magic}` header with {n} fields")));
    }
    Ok(fields[1..].to_vec())
}

/// `VOL1 nx ny nz voxel_mm` + f32 values, x fastest.
pub fn write_vol1(path: &Path, dims: [usize; 3], voxel_size: f64, values: &[f64]) -> Result<()> {
    let mut buf = format!("VOL1 {} {} {} {}\n", dims[0], dims[1], dims[2], voxel_size).into_bytes();
    push_f32(&mut buf, values.iter().copied());
    write_file(path, &buf)
}

pub fn read_vol1(path: &Path) -> Result<([usize; 3], f64, Vec<f64>)> {
    let bytes = read_file(path)?;
    let (header, payload) = split_header(path, &bytes)?;
    let f = header_fields(path, header, "VOL1", 4)?;
    let dims = [parse(path, f[0])?, parse(path, f[1])?, parse(path, f[2])?];
    let voxel: f64 = parse(path, f[3])?;
    let values = parse_f32s(path, payload, dims.iter().product())?;
    Ok((dims, voxel, values))
}

/// Density volume plus the `LBL1` label companion (one byte per voxel).
pub fn write_material_volume(vol_path: &Path, lbl_path: &Path, vol: &MaterialVolume) -> Result<()> {
    write_vol1(vol_path, vol.dims(), vol.voxel_size(), vol.densities())?;
    let d = vol.dims();
    let mut buf = format!("LBL1 {} {} {}\n", d[0], d[1], d[2]).into_bytes();
    buf.extend(vol.labels().iter().map(|l| l.index() as u8));
    write_file(lbl_path, &buf)
}

pub fn read_material_volume(vol_path: &Path, lbl_path: &Path) -> Result<MaterialVolume> {
    let (dims, voxel, densities) = read_vol1(vol_path)?;
    let bytes = read_file(lbl_path)?;
    let (header, payload) = split_header(lbl_path, &bytes)?;
    let f = header_fields(lbl_path, header, "LBL1", 3)?;
    let ldims: [usize; 3] = [parse(lbl_path, f[0])?, parse(lbl_path, f[1])?, parse(lbl_path, f[2])?];
    if ldims != dims || payload.len() != dims.iter().product::<usize>() {
        return Err(format_err(lbl_path, "label volume does not match the density volume"));
    }
    let labels = payload
        .iter()
        .map(|&b| MaterialLabel::from_u8(b).ok_or_else(|| format_err(lbl_path, format!("unknown label {b}"))))
        .collect::<Result<Vec<_>>>()?;
    MaterialVolume::from_parts(dims, voxel, labels, densities)
}

pub fn write_recon(path: &Path, vol: &ReconVolume) -> Result<()> {
    write_vol1(path, vol.dims, vol.voxel_size, &vol.values)
}

pub fn read_recon(path: &Path) -> Result<ReconVolume> {
    let (dims, voxel, values) = read_vol1(path)?;
    ReconVolume::new(dims, voxel, values, path.display().to_string())
}

/// `PRJ1 n rows cols pixel_mm` stack plus a geometry sidecar with one line
/// per view: `phi theta fluence m00 .. m23` (`fluence` is `none` for
/// noiseless views).
pub fn write_projections(path: &Path, geometry_path: &Path, images: &[ProjectionImage], geom: &DetectorGeometry) -> Result<()> {
    let mut buf = format!("PRJ1 {} {} {} {}\n", images.len(), geom.rows, geom.cols, geom.pixel_pitch).into_bytes();
    let mut sidecar = String::new();
    for img in images {
        if img.rows != geom.rows || img.cols != geom.cols {
            return Err(Error::Dimension("projection does not match the detector".into()));
        }
        push_f32(&mut buf, img.pixels.iter().copied());
        let fluence = img.fluence_level.map_or("none".to_string(), |f| f.to_string());
        let _ = write!(sidecar, "{} {} {fluence}", img.pose.phi(), img.pose.theta());
        for e in img.matrix.entries() {
            let _ = write!(sidecar, " {e}");
        }
        sidecar.push('\n');
    }
    write_file(path, &buf)?;
    write_file(geometry_path, sidecar.as_bytes())
}

pub fn read_projections(path: &Path, geometry_path: &Path, geom: &DetectorGeometry) -> Result<Vec<ProjectionImage>> {
    let bytes = read_file(path)?;
    let (header, payload) = split_header(path, &bytes)?;
    let f = header_fields(path, header, "PRJ1", 4)?;
    let (n, rows, cols): (usize, usize, usize) = (parse(path, f[0])?, parse(path, f[1])?, parse(path, f[2])?);
    if rows != geom.rows || cols != geom.cols {
        return Err(format_err(path, "stack does not match the configured detector"));
    }
    let pixels = parse_f32s(path, payload, n * rows * cols)?;
    let text = read_text(geometry_path)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != n {
        return Err(format_err(geometry_path, format!("expected {n} geometry lines")));
    }
    lines
        .iter()
        .enumerate()
        .map(|(k, line)| {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 15 {
                return Err(format_err(geometry_path, format!("line {} needs 15 fields", k + 1)));
            }
            let pose = ViewAngles::new(parse(geometry_path, f[0])?, parse(geometry_path, f[1])?)?;
            let fluence = if f[2] == "none" { None } else { Some(parse(geometry_path, f[2])?) };
            let entries = f[3..].iter().map(|v| parse(geometry_path, v)).collect::<Result<Vec<f64>>>()?;
            let matrix = ProjectionMatrix::from_entries(&entries)?;
            let px = pixels[k * rows * cols..(k + 1) * rows * cols].to_vec();
            ProjectionImage::new(px, geom, pose, matrix, fluence)
        })
        .collect()
}

pub fn write_map_csv(path: &Path, map: &DetectabilityMap) -> Result<()> {
    let mut s = String::from("phi,theta,d2\n");
    for (i, phi) in map.phis().iter().enumerate() {
        for (j, theta) in map.thetas().iter().enumerate() {
            let _ = writeln!(s, "{phi},{theta},{}", map.get(i, j));
        }
    }
    write_file(path, s.as_bytes())
}

fn csv_rows(path: &Path, header: &str) -> Result<Vec<Vec<String>>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(header) {
        return Err(format_err(path, format!("expected header `{header}`")));
    }
    let width = header.split(',').count();
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<String> = l.split(',').map(|v| v.trim().to_string()).collect();
            if f.len() != width {
                return Err(format_err(path, format!("row `{l}` has {} fields", f.len())));
            }
            Ok(f)
        })
        .collect()
}

pub fn read_map_csv(path: &Path) -> Result<DetectabilityMap> {
    let rows = csv_rows(path, "phi,theta,d2")?;
    let mut phis: Vec<f64> = vec![];
    let mut thetas: Vec<f64> = vec![];
    let mut values = vec![];
    for r in &rows {
        let (p, t, d): (f64, f64, f64) = (parse(path, &r[0])?, parse(path, &r[1])?, parse(path, &r[2])?);
        if phis.last() != Some(&p) {
            phis.push(p);
        }
        if phis.len() == 1 {
            thetas.push(t);
        }
        values.push(d);
    }
    DetectabilityMap::new(phis, thetas, values)
}

/// Trajectory CSV plus the raw-score sidecar (`t,s0..s10`; empty for the
/// start pose).
pub fn write_trajectory(path: &Path, scores_path: &Path, traj: &Trajectory) -> Result<()> {
    let mut main = String::from("t,phi_deg,theta_deg,chosen_score\n");
    let mut side = String::from("t");
    for i in 0..CANDIDATES {
        let _ = write!(side, ",s{i}");
    }
    side.push('\n');
    for (t, st) in traj.steps.iter().enumerate() {
        let chosen = st.chosen_score.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(main, "{t},{},{},{chosen}", st.pose.phi(), st.pose.theta());
        let _ = write!(side, "{t}");
        for i in 0..CANDIDATES {
            let v = st.scores.map_or(String::new(), |s| s[i].to_string());
            let _ = write!(side, ",{v}");
        }
        side.push('\n');
    }
    write_file(path, main.as_bytes())?;
    write_file(scores_path, side.as_bytes())
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let rows = csv_rows(path, "t,phi_deg,theta_deg,chosen_score")?;
    let steps = rows
        .iter()
        .map(|r| {
            let pose = ViewAngles::new(parse(path, &r[1])?, parse(path, &r[2])?)?;
            let chosen_score = if r[3].is_empty() { None } else { Some(parse(path, &r[3])?) };
            Ok(TrajectoryStep { pose, chosen_score, scores: None })
        })
        .collect::<Result<Vec<_>>>()?;
    let start = steps.first().ok_or_else(|| format_err(path, "empty trajectory"))?.pose;
    Ok(Trajectory { start, steps })
}

pub fn write_residuals(path: &Path, residuals: &[f64]) -> Result<()> {
    let mut s = String::from("iter,residual\n");
    for (k, r) in residuals.iter().enumerate() {
        let _ = writeln!(s, "{k},{r}");
    }
    write_file(path, s.as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub trajectory_id: String,
    pub fwhm_mm: f64,
    pub thread_peak: f64,
    pub ssim: f64,
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut s = String::from("trajectory_id,fwhm_mm,thread_peak,ssim\n");
    for r in rows {
        if r.trajectory_id.contains(',') {
            return Err(Error::Config(format!("trajectory id {:?} contains a comma", r.trajectory_id)));
        }
        let _ = writeln!(s, "{},{},{},{}", r.trajectory_id, r.fwhm_mm, r.thread_peak, r.ssim);
    }
    write_file(path, s.as_bytes())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    csv_rows(path, "trajectory_id,fwhm_mm,thread_peak,ssim")?
        .iter()
        .map(|r| {
            Ok(MetricsRow {
                trajectory_id: r[0].clone(),
                fwhm_mm: parse(path, &r[1])?,
                thread_peak: parse(path, &r[2])?,
                ssim: parse(path, &r[3])?,
            })
        })
        .collect()
}

/// ASCII (P2) grayscale image, min-max scaled to 0..255.
pub fn write_pgm(path: &Path, values: &[f64], rows: usize, cols: usize) -> Result<()> {
    if values.len() != rows * cols {
        return Err(Error::Dimension(format!("{} values for a {rows}x{cols} image", values.len())));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut s = format!("P2\n{cols} {rows}\n255\n");
    for row in values.chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0).to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    write_file(path, s.as_bytes())
}

/// Detectability map as an image: one row per `theta`, one column per `phi`.
pub fn write_map_pgm(path: &Path, map: &DetectabilityMap) -> Result<()> {
    let (np, nt) = (map.phis().len(), map.thetas().len());
    let values: Vec<f64> = (0..nt).flat_map(|j| (0..np).map(move |i| (i, j))).map(|(i, j)| map.get(i, j)).collect();
    write_pgm(path, &values, nt, np)
}

fn spec_line(spec: &LayerSpec) -> String {
    match spec {
        LayerSpec::Conv { channels, stride } => format!("conv {channels} {stride}"),
        LayerSpec::Relu => "relu".into(),
        LayerSpec::BatchNorm => "batchnorm".into(),
        LayerSpec::Pool => "pool".into(),
        LayerSpec::Dense { outputs } => format!("dense {outputs}"),
    }
}

/// `MDL1` model: ASCII header (input dims, one line per layer, `end`) then the
/// f32 tensors of each layer in order, batch-norm running statistics last
/// within their layer.
pub fn write_model(path: &Path, model: &RegressorModel) -> Result<()> {
    let (r, c) = model.input_dims();
    let mut head = format!("MDL1\ninput {r} {c}\nlayers {}\n", model.specs().len());
    for s in model.specs() {
        head.push_str(&spec_line(s));
        head.push('\n');
    }
    head.push_str("end\n");
    let mut buf = head.into_bytes();
    for (p, run) in model.params().iter().zip(model.running()) {
        push_f32(&mut buf, p.iter().chain(run).copied());
    }
    write_file(path, &buf)
}

pub fn read_model(path: &Path) -> Result<RegressorModel> {
    let bytes = read_file(path)?;
    let mut rest: &[u8] = &bytes;
    let mut next_line = || -> Result<String> {
        let (line, tail) = split_header(path, rest)?;
        let line = line.trim().to_string();
        rest = tail;
        Ok(line)
    };
    if next_line()? != "MDL1" {
        return Err(format_err(path, "not an MDL1 model"));
    }
    let input = next_line()?;
    let f: Vec<&str> = input.split_whitespace().collect();
    if f.len() != 3 || f[0] != "input" {
        return Err(format_err(path, "expected `input rows cols`"));
    }
    let dims = (parse(path, f[1])?, parse(path, f[2])?);
    let count_line = next_line()?;
    let count: usize = parse(path, count_line.strip_prefix("layers ").ok_or_else(|| format_err(path, "expected `layers n`"))?)?;
    let mut specs = vec![];
    for _ in 0..count {
        let line = next_line()?;
        let f: Vec<&str> = line.split_whitespace().collect();
        specs.push(match f.as_slice() {
            ["conv", ch, st] => LayerSpec::Conv { channels: parse(path, ch)?, stride: parse(path, st)? },
            ["relu"] => LayerSpec::Relu,
            ["batchnorm"] => LayerSpec::BatchNorm,
            ["pool"] => LayerSpec::Pool,
            ["dense", o] => LayerSpec::Dense { outputs: parse(path, o)? },
            _ => return Err(format_err(path, format!("unknown layer `{line}`"))),
        });
    }
    if next_line()? != "end" {
        return Err(format_err(path, "missing `end`"));
    }
    let mut model = RegressorModel::zeros(dims, &specs)?;
    let total: usize = model.params().iter().chain(model.running()).map(Vec::len).sum();
    let values = parse_f32s(path, rest, total)?;
    let mut at = 0;
    let mut params = vec![];
    let mut running = vec![];
    for (p, r) in model.params().iter().zip(model.running()) {
        params.push(values[at..at + p.len()].to_vec());
        at += p.len();
        running.push(values[at..at + r.len()].to_vec());
        at += r.len();
    }
    model.set_tensors(params, running)?;
    Ok(model)
}

/// Parse `key = value` lines; `#` starts a comment. Keys must be unique.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = vec![];
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|(e, _)| *e == k) {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
        }
        out.push((k, v));
    }
    Ok(out)
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `<file>.prov` record next to an output file.
pub fn write_provenance(output: &Path, config_hash: &str, command: &str, seeds: &[(&str, u64)]) -> Result<()> {
    let mut s = format!("file = {}\nconfig_hash = {config_hash}\ncommand = {command}\n", output.file_name().map(|f| f.to_string_lossy()).unwrap_or_default());
    for (name, v) in seeds {
        let _ = writeln!(s, "seed.{name} = {v}");
    }
    let mut name = output.as_os_str().to_owned();
    name.push(".prov");
    write_file(Path::new(&name), s.as_bytes())
}

/// Dataset on disk: `manifest.txt` (key=value records) and one `sim_NNN.dat`
/// per simulation holding `DST1 n rows cols` then per sample `phi theta`,
/// 11 targets, 11 mask flags (0/1) and the input, all f32.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    let m = &ds.manifest;
    let g = m.grid;
    let mut s = format!(
        "seed = {}\ngrid.phi_step = {}\ngrid.theta_min = {}\ngrid.theta_max = {}\ngrid.theta_step = {}\nfluences = {}\ninput.rows = {}\ninput.cols = {}\nsimulations = {}\n",
        m.seed,
        g.phi_step,
        g.theta_min,
        g.theta_max,
        g.theta_step,
        m.fluences.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        m.input_dims.0,
        m.input_dims.1,
        m.simulations.len()
    );
    let (rows, cols) = m.input_dims;
    for sim in &m.simulations {
        let file = format!("sim_{:03}.dat", sim.sim_id);
        let _ = write!(
            s,
            "sim.{id}.phantom_seed = {}\nsim.{id}.noise_seed = {}\nsim.{id}.split = {}\nsim.{id}.d2_min = {}\nsim.{id}.d2_max = {}\nsim.{id}.file = {file}\n",
            sim.phantom_seed,
            sim.noise_seed,
            if sim.test { "test" } else { "train" },
            sim.d2_min,
            sim.d2_max,
            id = sim.sim_id
        );
        let samples: Vec<&TrainingSample> = ds.samples.iter().filter(|x| x.sim_id == sim.sim_id).collect();
        let mut buf = format!("DST1 {} {rows} {cols}\n", samples.len()).into_bytes();
        for x in samples {
            push_f32(&mut buf, [x.pose.phi(), x.pose.theta()]);
            push_f32(&mut buf, x.target.iter().copied());
            push_f32(&mut buf, x.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }));
            push_f32(&mut buf, x.input.iter().map(|&v| v as f64));
        }
        write_file(&dir.join(file), &buf)?;
    }
    write_file(&dir.join("manifest.txt"), s.as_bytes())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("manifest.txt");
    let kv = parse_key_values(&read_text(&path)?)?;
    let get = |k: &str| -> Result<&str> {
        kv.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str()).ok_or_else(|| format_err(&path, format!("missing `{k}`")))
    };
    let grid = PoseGrid {
        phi_step: parse(&path, get("grid.phi_step")?)?,
        theta_min: parse(&path, get("grid.theta_min")?)?,
        theta_max: parse(&path, get("grid.theta_max")?)?,
        theta_step: parse(&path, get("grid.theta_step")?)?,
    };
    let fluences = get("fluences")?.split(',').map(|v| parse(&path, v.trim())).collect::<Result<Vec<f64>>>()?;
    let dims: (usize, usize) = (parse(&path, get("input.rows")?)?, parse(&path, get("input.cols")?)?);
    let n: usize = parse(&path, get("simulations")?)?;
    let mut simulations = vec![];
    let mut samples = vec![];
    for id in 0..n {
        let key = |f: &str| format!("sim.{id}.{f}");
        let test = match get(&key("split"))? {
            "test" => true,
            "train" => false,
            other => return Err(format_err(&path, format!("unknown split `{other}`"))),
        };
        simulations.push(SimulationRecord {
            sim_id: id,
            phantom_seed: parse(&path, get(&key("phantom_seed"))?)?,
            noise_seed: parse(&path, get(&key("noise_seed"))?)?,
            test,
            d2_min: parse(&path, get(&key("d2_min"))?)?,
            d2_max: parse(&path, get(&key("d2_max"))?)?,
        });
        let file = dir.join(get(&key("file"))?);
        let bytes = read_file(&file)?;
        let (header, payload) = split_header(&file, &bytes)?;
        let f = header_fields(&file, header, "DST1", 3)?;
        let count: usize = parse(&file, f[0])?;
        if (parse::<usize>(&file, f[1])?, parse::<usize>(&file, f[2])?) != dims {
            return Err(format_err(&file, "input dims differ from the manifest"));
        }
        let per = 2 + 2 * OUTPUTS + dims.0 * dims.1;
        let values = parse_f32s(&file, payload, count * per)?;
        for rec in values.chunks_exact(per) {
            samples.push(TrainingSample {
                pose: ViewAngles::new(rec[0], rec[1])?,
                target: std::array::from_fn(|i| rec[2 + i]),
                mask: std::array::from_fn(|i| rec[2 + OUTPUTS + i] != 0.0),
                input: rec[2 + 2 * OUTPUTS..].iter().map(|&v| v as f32).collect(),
                sim_id: id,
            });
        }
    }
    let manifest = DatasetManifest { seed: parse(&path, get("seed")?)?, grid, fluences, input_dims: dims, simulations };
    Ok(Dataset { manifest, samples })
}

/// Read every line of a small text file (used for spectrum files).
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    BufReader::new(f).lines().collect::<std::io::Result<_>>().map_err(|e| io_err(path, e))
}

/// Write text, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}
