use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{FdConfig, FdError, SolutionGrid};
use crate::spm::{CellParameters, CurrentProfile};

pub const FIELDS_FILE: &str = "fields.csv";
pub const POTENTIALS_FILE: &str = "potentials.csv";
pub const METADATA_FILE: &str = "metadata.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionMetadata {
    pub params_hash: String,
    pub horizon: f64,
    pub solver: FdConfig,
    pub profile: CurrentProfile,
    pub parameters: CellParameters,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FdError + '_ {
    move |source| FdError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `fields.csv` (one row per time and radial index), `potentials.csv`
/// (one row per time) and the `metadata.toml` sidecar.
pub fn write_solution_dir(dir: &Path, sol: &SolutionGrid, meta: &SolutionMetadata) -> Result<(), FdError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(FIELDS_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    writeln!(w, "t_s,r_index,r_anode_m,r_cathode_m,c_s_an,c_s_ca,phi_e,phi_s_ca").map_err(io_err(&path))?;
    let n_an = sol.anode_radii.len();
    let n_ca = sol.cathode_radii.len();
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for (k, &t) in sol.times.iter().enumerate() {
        for i in 0..n_an.max(n_ca) {
            writeln!(
                w,
                "{t},{i},{},{},{},{},{:e},{:e}",
                opt(sol.anode_radii.get(i).copied()),
                opt(sol.cathode_radii.get(i).copied()),
                opt((i < n_an).then(|| sol.anode_conc[[k, i]])),
                opt((i < n_ca).then(|| sol.cathode_conc[[k, i]])),
                sol.phi_e[k],
                sol.phi_s_ca[k],
            )
            .map_err(io_err(&path))?;
        }
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join(POTENTIALS_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    writeln!(w, "t_s,current_a_m2,phi_e,phi_s_ca,voltage").map_err(io_err(&path))?;
    for k in 0..sol.times.len() {
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e}",
            sol.times[k], sol.current[k], sol.phi_e[k], sol.phi_s_ca[k], sol.phi_s_ca[k]
        )
        .map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join(METADATA_FILE);
    let text = toml::to_string(meta).map_err(|e| FdError::Format(e.to_string()))?;
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(())
}

/// Reads back a directory written by [`write_solution_dir`].
pub fn read_solution_dir(dir: &Path) -> Result<(SolutionGrid, SolutionMetadata), FdError> {
    let path = dir.join(METADATA_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let meta: SolutionMetadata = toml::from_str(&text).map_err(|e| FdError::Format(e.to_string()))?;

    let path = dir.join(FIELDS_FILE);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| FdError::Format(e.to_string()))?;
    let mut times: Vec<f64> = Vec::new();
    let mut an_r: Vec<f64> = Vec::new();
    let mut ca_r: Vec<f64> = Vec::new();
    let mut an: Vec<f64> = Vec::new();
    let mut ca: Vec<f64> = Vec::new();
    let mut phi_e = Vec::new();
    let mut phi_s = Vec::new();
    let parse = |s: &str| -> Result<Option<f64>, FdError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse::<f64>()
                .map(Some)
                .map_err(|e| FdError::Format(format!("bad number {s:?}: {e}")))
        }
    };
    for rec in reader.records() {
        let rec = rec.map_err(|e| FdError::Format(e.to_string()))?;
        let t = parse(&rec[0])?.ok_or_else(|| FdError::Format("missing time".into()))?;
        let i: usize = rec[1].parse().map_err(|_| FdError::Format("bad radial index".into()))?;
        if i == 0 {
            times.push(t);
            phi_e.push(parse(&rec[6])?.unwrap_or(f64::NAN));
            phi_s.push(parse(&rec[7])?.unwrap_or(f64::NAN));
        }
        if times.len() == 1 {
            if let Some(r) = parse(&rec[2])? {
                an_r.push(r);
            }
            if let Some(r) = parse(&rec[3])? {
                ca_r.push(r);
            }
        }
        if let Some(c) = parse(&rec[4])? {
            an.push(c);
        }
        if let Some(c) = parse(&rec[5])? {
            ca.push(c);
        }
    }
    let nt = times.len();
    let shape_err = |_| FdError::Format("inconsistent field table shape".into());
    let anode_conc = Array2::from_shape_vec((nt, an_r.len()), an).map_err(shape_err)?;
    let cathode_conc = Array2::from_shape_vec((nt, ca_r.len()), ca).map_err(shape_err)?;

    let path = dir.join(POTENTIALS_FILE);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| FdError::Format(e.to_string()))?;
    let mut current = Vec::with_capacity(nt);
    for rec in reader.records() {
        let rec = rec.map_err(|e| FdError::Format(e.to_string()))?;
        current.push(parse(&rec[1])?.unwrap_or(f64::NAN));
    }
    if current.len() != nt {
        return Err(FdError::Format(
            "potentials.csv and fields.csv disagree on time rows".into(),
        ));
    }
    Ok((
        SolutionGrid {
            times,
            anode_radii: an_r,
            cathode_radii: ca_r,
            anode_conc,
            cathode_conc,
            phi_e,
            phi_s_ca: phi_s,
            current,
        },
        meta,
    ))
}
