//! Dataset and trace files.
//!
//! A dataset directory holds
//!
//! * `data.csv`: columns `u1 … um, y`, one row per time instant;
//! * `problem.json`: `{n, m, p, alpha}`;
//! * `truth.json` (generated data only): true FIRs, σ², seed and the
//!   collinear channels.
//!
//! Traces are written as CSV (`iteration, theta_k_l…, lambda…, sigma2`) or
//! as a binary file with a JSON sidecar. The binary layout is `b"MTRC"`,
//! `u32` version, `u64` rows, `u64` mp, `u64` scale count, then per row a
//! `u64` iteration and `mp + scales + 1` little-endian `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::collinearity::Block;
use crate::datagen::{Dataset, DatasetSpec};
use crate::kernel::ImpulseResponseSet;
use crate::samplers::{ChainConfig, ChainTrace, SchemeId, Selection};
use crate::{Error, Result};

pub const DATA_FILE: &str = "data.csv";
pub const PROBLEM_FILE: &str = "problem.json";
pub const TRUTH_FILE: &str = "truth.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemDescriptor {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub firs: Vec<Vec<f64>>,
    pub sigma2: f64,
    pub seed: u64,
    pub collinear_channels: Vec<usize>,
    #[serde(default)]
    pub tail_ratio: Option<f64>,
    #[serde(default)]
    pub spec: Option<DatasetSpec>,
}

impl Truth {
    pub fn impulse_responses(&self) -> Result<ImpulseResponseSet> {
        ImpulseResponseSet::from_blocks(&self.firs)
    }
}

/// Inputs and output read back from a dataset directory.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub descriptor: ProblemDescriptor,
    pub inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_data_csv(path: &Path, inputs: &[Vec<f64>], output: &[f64]) -> Result<()> {
    if inputs.iter().any(|u| u.len() != output.len()) {
        return Err(Error::Dimension("inputs and output differ in length".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=inputs.len()).map(|k| format!("u{k}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for t in 0..output.len() {
        let mut row: Vec<String> = inputs.iter().map(|u| u[t].to_string()).collect();
        row.push(output[t].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `u1 … um, y` columns; the header decides `m`.
pub fn read_data_csv(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let y_col = header
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| Error::Format(format!("{}: no 'y' column", path.display())))?;
    let u_cols: Vec<usize> = (1..)
        .map_while(|k| header.iter().position(|h| h == format!("u{k}")))
        .collect();
    if u_cols.is_empty() {
        return Err(Error::Format(format!("{}: no 'u1' column", path.display())));
    }
    let mut inputs = vec![Vec::new(); u_cols.len()];
    let mut output = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let get = |c: usize| -> Result<f64> {
            rec.get(c)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad number on row {}", path.display(), line + 2)))
        };
        for (k, &c) in u_cols.iter().enumerate() {
            inputs[k].push(get(c)?);
        }
        output.push(get(y_col)?);
    }
    Ok((inputs, output))
}

/// Writes `data.csv`, `problem.json` and `truth.json` into `dir`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_data_csv(&dir.join(DATA_FILE), &data.inputs, &data.output)?;
    write_json(
        &dir.join(PROBLEM_FILE),
        &ProblemDescriptor {
            n: data.spec.n,
            m: data.spec.m,
            p: data.spec.p,
            alpha: data.spec.alpha,
        },
    )?;
    write_json(
        &dir.join(TRUTH_FILE),
        &Truth {
            firs: data.truth.to_blocks(),
            sigma2: data.sigma2,
            seed: data.spec.seed,
            collinear_channels: data.collinear_channels.clone(),
            tail_ratio: Some(data.tail_ratio),
            spec: Some(data.spec.clone()),
        },
    )
}

/// Reads `data.csv` and `problem.json`, checking that they agree.
pub fn read_dataset(dir: &Path) -> Result<LoadedData> {
    let descriptor: ProblemDescriptor = read_json(&dir.join(PROBLEM_FILE))?;
    let (inputs, output) = read_data_csv(&dir.join(DATA_FILE))?;
    if inputs.len() != descriptor.m || output.len() != descriptor.n {
        return Err(Error::Format(format!(
            "{}: data has m={}, n={} but the descriptor says m={}, n={}",
            dir.display(),
            inputs.len(),
            output.len(),
            descriptor.m,
            descriptor.n
        )));
    }
    Ok(LoadedData {
        descriptor,
        inputs,
        output,
    })
}

/// `truth.json` if present.
pub fn read_truth(dir: &Path) -> Result<Option<Truth>> {
    let path = dir.join(TRUTH_FILE);
    if !path.exists() {
        return Ok(None);
    }
    read_json(&path).map(Some)
}

fn scale_names(trace: &ChainTrace) -> Vec<String> {
    if trace.n_scales == 1 {
        vec!["lambda".into()]
    } else {
        (1..=trace.n_scales).map(|k| format!("lambda_{k}")).collect()
    }
}

pub fn write_trace_csv(path: &Path, trace: &ChainTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["iteration".to_string()];
    for k in 1..=trace.m {
        for l in 1..=trace.p {
            header.push(format!("theta_{k}_{l}"));
        }
    }
    header.extend(scale_names(trace));
    header.push("sigma2".into());
    w.write_record(&header)?;
    for s in 0..trace.len() {
        let mut row = vec![trace.iterations[s].to_string()];
        row.extend(trace.theta_row(s).iter().map(|x| x.to_string()));
        row.extend(trace.scales_row(s).iter().map(|x| x.to_string()));
        row.push(trace.sigma2[s].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_selections_csv(path: &Path, selections: &[Selection]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["block", "iteration", "substep"])?;
    for s in selections {
        w.write_record([s.block.to_string(), s.iteration.to_string(), s.substep.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_selections_csv(path: &Path) -> Result<Vec<Selection>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::Format("short selection row".into()));
        let num = |i: usize| -> Result<usize> {
            field(i)?
                .parse()
                .map_err(|_| Error::Format(format!("bad selection row {rec:?}")))
        };
        out.push(Selection {
            block: Block::parse_label(field(0)?)?,
            iteration: num(1)?,
            substep: num(2)?,
        });
    }
    Ok(out)
}

/// JSON sidecar of a binary trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub scheme: SchemeId,
    pub config: ChainConfig,
    pub seed: u64,
    pub m: usize,
    pub p: usize,
    pub n_scales: usize,
    pub rows: usize,
    pub thin: usize,
}

const TRACE_MAGIC: &[u8; 4] = b"MTRC";
const TRACE_VERSION: u32 = 1;

/// Writes `path` and `path.json`.
pub fn write_trace_binary(path: &Path, trace: &ChainTrace, config: &ChainConfig) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TRACE_MAGIC)?;
    w.write_all(&TRACE_VERSION.to_le_bytes())?;
    for v in [trace.len(), trace.dim(), trace.n_scales] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for s in 0..trace.len() {
        w.write_all(&(trace.iterations[s] as u64).to_le_bytes())?;
        for x in trace
            .theta_row(s)
            .iter()
            .chain(trace.scales_row(s))
            .chain(std::iter::once(&trace.sigma2[s]))
        {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    write_json(
        &sidecar_path(path),
        &TraceSidecar {
            scheme: trace.scheme,
            config: config.clone(),
            seed: config.seed,
            m: trace.m,
            p: trace.p,
            n_scales: trace.n_scales,
            rows: trace.len(),
            thin: trace.thin,
        },
    )
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Reads a trace written by [`write_trace_binary`]. Selections and timing
/// are not part of the binary file.
pub fn read_trace_binary(path: &Path) -> Result<(ChainTrace, TraceSidecar)> {
    let side: TraceSidecar = read_json(&sidecar_path(path))?;
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TRACE_MAGIC {
        return Err(Error::Format(format!("{}: not a trace file", path.display())));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != TRACE_VERSION {
        return Err(Error::Format(format!("{}: unsupported trace version", path.display())));
    }
    let mut b8 = [0u8; 8];
    let mut next_u64 = |r: &mut BufReader<File>| -> Result<u64> {
        r.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let rows = next_u64(&mut r)? as usize;
    let dim = next_u64(&mut r)? as usize;
    let n_scales = next_u64(&mut r)? as usize;
    if rows != side.rows || dim != side.m * side.p || n_scales != side.n_scales {
        return Err(Error::Format(format!("{}: header disagrees with sidecar", path.display())));
    }
    let mut trace = ChainTrace {
        scheme: side.scheme,
        m: side.m,
        p: side.p,
        thin: side.thin,
        n_scales,
        iterations: Vec::with_capacity(rows),
        theta: Vec::with_capacity(rows * dim),
        scales: Vec::with_capacity(rows * n_scales),
        sigma2: Vec::with_capacity(rows),
        selections: Vec::new(),
        elapsed_secs: 0.0,
    };
    let mut f = [0u8; 8];
    let mut next_f64 = |r: &mut BufReader<File>| -> Result<f64> {
        r.read_exact(&mut f)?;
        Ok(f64::from_le_bytes(f))
    };
    for _ in 0..rows {
        trace.iterations.push(next_u64(&mut r)? as usize);
        for _ in 0..dim {
            trace.theta.push(next_f64(&mut r)?);
        }
        for _ in 0..n_scales {
            trace.scales.push(next_f64(&mut r)?);
        }
        trace.sigma2.push(next_f64(&mut r)?);
    }
    Ok((trace, side))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate_dataset;
    use crate::kernel::{PreparedProblem, RegressionProblem, StableSplineKernel};
    use crate::samplers::run_chain;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = DatasetSpec::example1(3);
        spec.n = 80;
        let data = generate_dataset(&spec).unwrap();
        write_dataset(dir.path(), &data).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.inputs, data.inputs);
        assert_eq!(back.output, data.output);
        assert_eq!(back.descriptor.p, 50);
        let truth = read_truth(dir.path()).unwrap().unwrap();
        assert_eq!(truth.impulse_responses().unwrap(), data.truth);
    }

    #[test]
    fn missing_output_column_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "u1,u2\n1,2\n").unwrap();
        assert!(matches!(read_data_csv(&path), Err(Error::Format(_))));
    }

    #[test]
    fn trace_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = vec![vec![1.0, 0.5, -0.2, 0.3, 0.0, 1.0], vec![0.0, 1.0, 0.0, -1.0, 0.4, 0.1]];
        let prob = PreparedProblem::new(
            RegressionProblem::build(inputs, vec![0.3, 1.0, -0.5, 0.2, 0.1, 0.9], 2).unwrap(),
        );
        let kernel = StableSplineKernel::new(0.9, 2).unwrap();
        let cfg = ChainConfig::new(SchemeId::Rsgsd, 12).with_n_ob(1);
        let trace = run_chain(&cfg, &prob, &kernel, None).unwrap();

        let bin = dir.path().join("trace.bin");
        write_trace_binary(&bin, &trace, &cfg).unwrap();
        let (back, side) = read_trace_binary(&bin).unwrap();
        assert_eq!(back.theta, trace.theta);
        assert_eq!(back.scales, trace.scales);
        assert_eq!(side.config, cfg);

        let csv_path = dir.path().join("trace.csv");
        write_trace_csv(&csv_path, &trace).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("iteration,theta_1_1,theta_1_2,theta_2_1,theta_2_2,lambda_1,lambda_2,sigma2"));
        assert_eq!(text.lines().count(), 13);

        let sel = dir.path().join("sel.csv");
        write_selections_csv(&sel, &trace.selections).unwrap();
        assert_eq!(read_selections_csv(&sel).unwrap(), trace.selections);
    }
}
