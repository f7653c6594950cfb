//! Report emission. Every number is written with 17 significant digits, so identical
//! results give byte-identical files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use halfplane::direct::{default_x_nodes, inverse_transform, RealField};
use halfplane::{BoundReport, ModeField};

use crate::pipeline::Outcome;
use crate::RunError;

/// Fixed 17-significant-digit scientific notation.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn writer(path: &Path) -> Result<BufWriter<File>, RunError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn spectral_csv(path: &Path, f: &ModeField) -> Result<(), RunError> {
    let mut w = writer(path)?;
    writeln!(w, "k,t,re,im")?;
    let g = &f.grid;
    for ik in 0..g.nk() {
        for it in 0..g.nt() {
            let v = f.raw(ik, it);
            writeln!(w, "{},{},{},{}", num(g.k_nodes[ik]), num(g.t_nodes[it]), num(v.re), num(v.im))?;
        }
        // blank line between k-blocks for gnuplot's pm3d
        writeln!(w)?;
    }
    Ok(w.flush()?)
}

fn direct_csv(path: &Path, f: &RealField) -> Result<(), RunError> {
    let mut w = writer(path)?;
    writeln!(w, "x,t,re,im")?;
    let nx = f.x.len();
    for (it, &t) in f.t.iter().enumerate() {
        for (ix, &x) in f.x.iter().enumerate() {
            let i = it * nx + ix;
            writeln!(w, "{},{},{},{}", num(x), num(t), num(f.values[i]), num(f.imag[i]))?;
        }
        writeln!(w)?;
    }
    Ok(w.flush()?)
}

/// File-name form of a report name.
pub fn slug(name: &str) -> String {
    let s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect();
    s.trim_matches('_').to_string()
}

fn bound_csv(path: &Path, r: &BoundReport) -> Result<(), RunError> {
    let mut w = writer(path)?;
    writeln!(w, "{}", r.columns.join(","))?;
    for row in &r.samples {
        let cells: Vec<String> = row.iter().map(|&v| num(v)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(w.flush()?)
}

/// Writes summary.json, fields/, decay.csv and bounds/ under `out`.
pub fn emit_reports(outcome: &Outcome, out: &Path) -> Result<(), RunError> {
    fs::create_dir_all(out)?;
    let s = &outcome.summary;
    let cfg = &s.config;
    if let Some(state) = &outcome.state {
        let fields = out.join("fields");
        fs::create_dir_all(&fields)?;
        let mut spectral: Vec<(&str, &ModeField)> = vec![("omega", &state.omega), ("u", &state.u), ("v", &state.v)];
        if let Some(d) = &state.derivative {
            spectral.push(("dk_omega", &d.d));
        }
        if let Some(p) = &outcome.pressure {
            spectral.push(("p", &p.p));
        }
        if cfg.output.spectral_fields {
            for (name, f) in &spectral {
                spectral_csv(&fields.join(format!("{name}_k.csv")), f)?;
            }
        }
        if cfg.output.direct_fields {
            let x = default_x_nodes(&state.omega.grid);
            for (name, f) in &spectral {
                if *name == "dk_omega" {
                    continue;
                }
                direct_csv(&fields.join(format!("{name}_x.csv")), &inverse_transform(f, &x)?)?;
            }
        }
    }
    if let Some(c) = &s.decay {
        let mut w = writer(&out.join("decay.csv"))?;
        writeln!(w, "t,u,v,omega,x_omega,omega_at_0,chain_omega,chain_u,chain_v,chain_dk_omega")?;
        for r in &c.rows {
            let vals = [r.t, r.u, r.v, r.omega, r.x_omega, r.omega_at_0, r.chain[0], r.chain[1], r.chain[2], r.chain[3]];
            writeln!(w, "{}", vals.iter().map(|&v| num(v)).collect::<Vec<_>>().join(","))?;
        }
        w.flush()?;
    }
    if cfg.output.bound_sweeps && !s.bounds.is_empty() {
        let dir = out.join("bounds");
        fs::create_dir_all(&dir)?;
        for r in &s.bounds {
            bound_csv(&dir.join(format!("{}.csv", slug(&r.name))), r)?;
        }
    }
    let mut w = writer(&out.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut w, s).map_err(|e| RunError::Io(e.into()))?;
    writeln!(w)?;
    Ok(w.flush()?)
}
