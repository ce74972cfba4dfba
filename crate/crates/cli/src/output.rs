//! Subcommand bodies and report files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ehm_fdi::harness::experiment::{measurement_noise, run_replicate, sensitivity_analysis};
use ehm_fdi::harness::report::summary_table;
use ehm_fdi::harness::{run_monte_carlo, simulate_plant, FaultSpec, McSummary, Prepared};
use ehm_fdi::sensitivity::{simulate_with_sensitivities, TrajectoryContext};
use ehm_fdi::{FdiError, Param};
use serde::Serialize;

use crate::{CliError, Job};

fn runtime(e: FdiError) -> CliError {
    CliError::Runtime(e)
}

fn prepare(job: &Job) -> Result<Prepared, CliError> {
    Prepared::new(job.config.clone()).map_err(CliError::Config)
}

/// `R_f+0.2%` → `R_f+0.2pct`.
fn file_label(label: &str) -> String {
    label
        .replace('%', "pct")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "+-._".contains(c) { c } else { '_' })
        .collect()
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<fs::File>), CliError> {
    let path = dir.join(name);
    let write_err = |source| CliError::Write {
        path: path.clone(),
        source,
    };
    fs::create_dir_all(dir).map_err(write_err)?;
    let file = fs::File::create(&path).map_err(write_err)?;
    Ok((path, BufWriter::new(file)))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let (path, mut w) = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(std::io::Error::from)
        .and_then(|_| w.flush())
        .map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
    Ok(path)
}

fn write_with<F>(dir: &Path, name: &str, body: F) -> Result<PathBuf, CliError>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
{
    let (path, mut w) = create(dir, name)?;
    body(&mut w).and_then(|_| w.flush()).map_err(|source| CliError::Write {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn announce(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    fault: FaultSpec,
    label: String,
    n: usize,
    cycle: &'a str,
    capacity_ah: f64,
    peak_c_rate: Option<f64>,
    mean_c_rate: Option<f64>,
    soc_range: (f64, f64),
    voltage_range: (f64, f64),
    q_loss_ah: f64,
}

pub fn simulate(job: &Job) -> Result<(), CliError> {
    let prep = prepare(job)?;
    let cfg = &prep.config;
    let fault = cfg.fault;
    let plant = simulate_plant(&prep, &fault).map_err(runtime)?;
    let exp = &cfg.experiment;
    let noise = measurement_noise(exp.seed, job.run as u64, plant.voltage.len(), exp.noise_var).map_err(runtime)?;
    let v_range = plant
        .voltage
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let summary = SimulationSummary {
        fault,
        label: fault.label(),
        n: plant.voltage.len(),
        cycle: &prep.cycle.label,
        capacity_ah: cfg.capacity_ah(),
        peak_c_rate: prep.cycle.scaling.map(|s| s.peak_c_rate()),
        mean_c_rate: prep.cycle.scaling.map(|s| s.mean_c_rate()),
        soc_range: plant.soc_range(),
        voltage_range: v_range,
        q_loss_ah: plant.q_loss,
    };
    let stem = format!("simulate-{}", file_label(&summary.label));
    let area = cfg.cell.area;
    let t_s = cfg.cell.t_s;
    let csv = write_with(&job.report_dir, &format!("{stem}.csv"), |w| {
        writeln!(w, "k,time_s,current_a,current_density,soc,c_ss_bar,voltage,y_meas,side_current_density")?;
        for (k, z) in prep.currents.iter().enumerate() {
            let s = plant.states[k];
            writeln!(
                w,
                "{k},{},{},{z},{},{},{},{},{}",
                k as f64 * t_s,
                z * area,
                s.soc,
                s.c_ss_bar,
                plant.voltage[k],
                plant.voltage[k] + noise[k],
                plant.side_current[k]
            )?;
        }
        Ok(())
    })?;
    let json = write_json(&job.report_dir, &format!("{stem}.json"), &summary)?;
    println!(
        "{}: {} samples, SOC {:.3} → {:.3}, voltage [{:.4}, {:.4}] V, side-reaction loss {:.3e} Ah",
        summary.label, summary.n, summary.soc_range.1, summary.soc_range.0, v_range.0, v_range.1, plant.q_loss
    );
    announce(&[json, csv]);
    Ok(())
}

#[derive(Serialize)]
struct SensitivitySummary {
    n: usize,
    parameters: [&'static str; 4],
    /// Column norms of ∂y/∂θ (diagonal of D).
    d: [f64; 4],
    /// Rows of C.
    c: [[f64; 4]; 4],
    relative_norms: [f64; 4],
    ranking: Vec<&'static str>,
    soc_range: (f64, f64),
}

pub fn sensitivity(job: &Job) -> Result<(), CliError> {
    let prep = prepare(job)?;
    let cfg = &prep.config;
    let sa = sensitivity_analysis(&prep).map_err(runtime)?;
    let ctx = TrajectoryContext {
        initial: cfg.initial_state(),
        currents: &prep.currents,
        theta: cfg.theta,
        params: &cfg.cell,
        ocps: &prep.ocps,
    };
    let tr = simulate_with_sensitivities(&ctx).map_err(runtime)?;
    let c = sa.report.c;
    let summary = SensitivitySummary {
        n: tr.s_y.len(),
        parameters: Param::ALL.map(Param::name),
        d: sa.report.norms(),
        c: std::array::from_fn(|i| std::array::from_fn(|j| c[(i, j)])),
        relative_norms: sa.relative_norms,
        ranking: sa.report.ranking().iter().map(|p| p.name()).collect(),
        soc_range: sa.soc_range,
    };
    let theta = cfg.theta.to_vector();
    let csv = write_with(&job.report_dir, "sensitivity-trace.csv", |w| {
        writeln!(
            w,
            "k,soc,c_ss_bar,y,s_eps_s_neg,s_R_f,s_g_s,s_n_Li,rel_eps_s_neg,rel_R_f,rel_g_s,rel_n_Li"
        )?;
        for (k, s) in tr.s_y.iter().enumerate() {
            let x = tr.states[k];
            write!(w, "{k},{},{},{}", x.soc, x.c_ss_bar, tr.y[k])?;
            for j in 0..4 {
                write!(w, ",{}", s[j])?;
            }
            for j in 0..4 {
                write!(w, ",{}", s[j] * theta[j])?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    let json = write_json(&job.report_dir, "sensitivity.json", &summary)?;
    println!("{:<12}{:>14}{:>14}", "parameter", "D", "θ-scaled");
    for p in Param::ALL {
        println!(
            "{:<12}{:>14.4e}{:>14.4e}",
            p.name(),
            summary.d[p.index()],
            summary.relative_norms[p.index()]
        );
    }
    println!("C =");
    for row in summary.c {
        println!("  [{:>8.4} {:>8.4} {:>8.4} {:>8.4}]", row[0], row[1], row[2], row[3]);
    }
    println!("ranking: {}", summary.ranking.join(" > "));
    announce(&[json, csv]);
    Ok(())
}

pub fn detect(job: &Job, isolate: bool) -> Result<(), CliError> {
    let prep = prepare(job)?;
    let fault = prep.config.fault;
    let plant = simulate_plant(&prep, &fault).map_err(runtime)?;
    let out = run_replicate(&prep, &fault, &plant, job.run, true).map_err(runtime)?;
    let r = &out.report;
    let stem = format!(
        "{}-{}-run{}",
        if isolate { "isolate" } else { "detect" },
        file_label(&fault.label()),
        job.run
    );
    let json = write_json(&job.report_dir, &format!("{stem}.json"), r)?;
    let trace = out.trace.as_ref().expect("trace requested");
    let csv = write_with(&job.report_dir, &format!("{stem}-trace.csv"), |w| trace.write_csv(w))?;
    println!(
        "{} run {}: global χ² = {:.3} (threshold {:.3}) → {}",
        fault.label(),
        job.run,
        r.chi2_global,
        r.thresholds.global,
        if r.detected { "FAULT DETECTED" } else { "no fault detected" }
    );
    if isolate {
        for p in Param::ALL {
            let i = p.index();
            println!(
                "  min-max {:<10}{:>10.3}{}",
                p.name(),
                r.chi2_minmax[i],
                if r.isolated[i] { "  above threshold" } else { "" }
            );
        }
        println!("  threshold {:.3}", r.thresholds.isolation);
        match r.most_likely_fault {
            Some(p) => println!("  largest flagged statistic (heuristic): {p}"),
            None => println!("  no parameter flagged"),
        }
    }
    announce(&[json, csv]);
    Ok(())
}

pub fn montecarlo(job: &Job) -> Result<(), CliError> {
    let prep = prepare(job)?;
    let mut summaries: Vec<McSummary> = Vec::with_capacity(job.faults.len());
    let mut written = Vec::new();
    for fault in &job.faults {
        let s = run_monte_carlo(&prep, fault).map_err(runtime)?;
        if !s.failures.is_empty() {
            eprintln!(
                "ehm-fdi: {} of {} replicates of {} failed (see the report)",
                s.failures.len(),
                s.n_runs,
                s.label
            );
        }
        written.push(write_json(
            &job.report_dir,
            &format!("montecarlo-{}.json", file_label(&s.label)),
            &s,
        )?);
        summaries.push(s);
    }
    let table = summary_table(&summaries);
    let name = if summaries.len() == 1 {
        format!("montecarlo-{}-table.txt", file_label(&summaries[0].label))
    } else {
        "montecarlo-table.txt".to_string()
    };
    written.push(write_with(&job.report_dir, &name, |w| w.write_all(table.as_bytes()))?);
    print!("{table}");
    announce(&written);
    Ok(())
}
