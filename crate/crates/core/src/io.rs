//! CSV and JSON artifacts.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! reader here reproduces the written values bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use nalgebra_sparse::CsrMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{CloudMeta, PointCloud};
use crate::error::{Error, Result};
use crate::gradients::GradientField;

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(BufWriter::new(File::create(path)?)))
}

fn reader(path: &Path, headers: bool) -> Result<csv::Reader<BufReader<File>>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(headers)
        .flexible(true)
        .from_reader(BufReader::new(File::open(path)?)))
}

fn parse_f64(field: &str, path: &Path) -> Result<f64> {
    field.trim().parse().map_err(|_| {
        Error::invalid(format!(
            "{}: cannot parse `{field}` as a number",
            path.display()
        ))
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Writes `rows` under `header`, one CSV record per row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Sidecar of a point-cloud CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudSidecar {
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub meta: CloudMeta,
}

/// Writes `points.csv` (header `x0..x{p-1}`) and `points.json`; when the
/// cloud carries ground truth, also `true_frames.csv`.
pub fn write_cloud(dir: &Path, cloud: &PointCloud) -> Result<Vec<std::path::PathBuf>> {
    let csv_path = dir.join("points.csv");
    let mut w = writer(&csv_path)?;
    let header: Vec<String> = (0..cloud.dim()).map(|a| format!("x{a}")).collect();
    w.write_record(&header)?;
    for j in 0..cloud.n() {
        w.write_record(cloud.point(j).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    let json_path = dir.join("points.json");
    write_json(
        &json_path,
        &CloudSidecar {
            n: cloud.n(),
            p: cloud.dim(),
            seed: cloud.seed,
            meta: cloud.meta.clone(),
        },
    )?;
    let mut paths = vec![csv_path, json_path];
    if cloud.clean.is_some() {
        let frames_path = dir.join("true_frames.csv");
        write_frames(&frames_path, &cloud.true_tangent_frames()?)?;
        paths.push(frames_path);
    }
    Ok(paths)
}

/// Reads a cloud written by [`write_cloud`]. Ground-truth frames are not
/// restored.
pub fn read_cloud(dir: &Path) -> Result<PointCloud> {
    let sidecar: CloudSidecar = read_json(&dir.join("points.json"))?;
    let path = dir.join("points.csv");
    let mut r = reader(&path, true)?;
    let mut points = DMatrix::zeros(sidecar.p, sidecar.n);
    let mut count = 0;
    for (j, rec) in r.records().enumerate() {
        let rec = rec?;
        if j >= sidecar.n || rec.len() != sidecar.p {
            return Err(Error::DimensionMismatch {
                expected: format!("{} rows of {} columns", sidecar.n, sidecar.p),
                actual: format!("row {j} with {} columns", rec.len()),
            });
        }
        for (a, field) in rec.iter().enumerate() {
            points[(a, j)] = parse_f64(field, &path)?;
        }
        count += 1;
    }
    if count != sidecar.n {
        return Err(Error::DimensionMismatch {
            expected: format!("{} rows", sidecar.n),
            actual: format!("{count}"),
        });
    }
    PointCloud::new(points, sidecar.seed, sidecar.meta)
}

/// Coordinate triplets `i,j,value`.
pub fn write_triplets(path: &Path, m: &CsrMatrix<f64>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["i", "j", "value"])?;
    for (i, j, v) in m.triplet_iter() {
        w.write_record([i.to_string(), j.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `index,eigenvalue`.
pub fn write_spectrum(path: &Path, eigenvalues: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["index", "eigenvalue"])?;
    for (i, v) in eigenvalues.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_spectrum(path: &Path) -> Result<Vec<f64>> {
    let mut r = reader(path, true)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            parse_f64(rec.get(1).unwrap_or(""), path)
        })
        .collect()
}

/// A dense matrix, one CSV row per matrix row, no header.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = writer(path)?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = reader(path, false)?;
    let mut data = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for rec in r.records() {
        let rec = rec?;
        if *ncols.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::invalid(format!(
                "{}: ragged matrix rows",
                path.display()
            )));
        }
        for field in rec.iter() {
            data.push(parse_f64(field, path)?);
        }
        nrows += 1;
    }
    Ok(DMatrix::from_row_slice(nrows, ncols.unwrap_or(0), &data))
}

/// Row `index, G[0,0], G[0,1], ..` per point, each `p x m` block flattened
/// row-major.
pub fn write_gradients(path: &Path, field: &GradientField) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["index".to_string()];
    for a in 0..field.dim() {
        for i in 0..field.m {
            header.push(format!("g{a}_{i}"));
        }
    }
    w.write_record(&header)?;
    for (j, g) in field.gradients.iter().enumerate() {
        let mut rec = vec![j.to_string()];
        for row in g.row_iter() {
            rec.extend(row.iter().map(|v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Row `index, p, d, Q[0,0], Q[0,1], ..` per point, `Q_j` flattened
/// row-major.
pub fn write_frames(path: &Path, frames: &[DMatrix<f64>]) -> Result<()> {
    let mut w = writer(path)?;
    for (j, q) in frames.iter().enumerate() {
        let mut rec = vec![j.to_string(), q.nrows().to_string(), q.ncols().to_string()];
        for row in q.row_iter() {
            rec.extend(row.iter().map(|v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frames(path: &Path) -> Result<Vec<DMatrix<f64>>> {
    let mut r = reader(path, false)?;
    let mut frames = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let head = |i: usize| -> Result<usize> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::invalid(format!("{}: malformed frame row", path.display())))
        };
        let (index, p, d) = (head(0)?, head(1)?, head(2)?);
        if index != frames.len() || rec.len() != 3 + p * d {
            return Err(Error::invalid(format!(
                "{}: malformed frame row for point {index}",
                path.display()
            )));
        }
        let values = rec
            .iter()
            .skip(3)
            .map(|f| parse_f64(f, path))
            .collect::<Result<Vec<_>>>()?;
        frames.push(DMatrix::from_row_slice(p, d, &values));
    }
    Ok(frames)
}

/// `index,dim`.
pub fn write_dims(path: &Path, dims: &[usize]) -> Result<()> {
    let rows: Vec<Vec<String>> = dims
        .iter()
        .enumerate()
        .map(|(j, d)| vec![j.to_string(), d.to_string()])
        .collect();
    write_table(path, &["index", "dim"], &rows)
}

/// `index,<name>` for one value per point.
pub fn write_per_point(path: &Path, name: &str, values: &[f64]) -> Result<()> {
    let rows: Vec<Vec<String>> = values
        .iter()
        .enumerate()
        .map(|(j, v)| vec![j.to_string(), v.to_string()])
        .collect();
    write_table(path, &["index", name], &rows)
}

/// `index,z0..z{d-1}` from an `n x d` embedding.
pub fn write_embedding(path: &Path, embedding: &DMatrix<f64>) -> Result<()> {
    let mut header = vec!["index".to_string()];
    header.extend((0..embedding.ncols()).map(|a| format!("z{a}")));
    let mut w = writer(path)?;
    w.write_record(&header)?;
    for (j, row) in embedding.row_iter().enumerate() {
        let mut rec = vec![j.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `index,norm,label`.
pub fn write_boundary(path: &Path, norms: &[f64], labels: &[bool]) -> Result<()> {
    let rows: Vec<Vec<String>> = norms
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(j, (v, l))| vec![j.to_string(), v.to_string(), u8::from(*l).to_string()])
        .collect();
    write_table(path, &["index", "norm", "label"], &rows)
}
