use std::path::{Path, PathBuf};

use focusfuse::io::{load_image, save_image};
use focusfuse::pipeline::{resolve_inputs, run_pipeline, sweep_csv, DumpDirs, RunReport};
use focusfuse::synth::{evaluate, generate, procedural_base, SyntheticMeta, SyntheticSpec};
use focusfuse::{FuseError, Image, Result};
use serde::{Deserialize, Serialize};

use crate::{EvalArgs, FuseArgs, SweepArgs, SynthArgs};

/// Written by `synth` next to the stack so `eval` can find the planted shifts.
#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    images: Vec<String>,
    truth: String,
    #[serde(flatten)]
    meta: SyntheticMeta,
}

const MANIFEST: &str = "synth.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn fuse(args: FuseArgs) -> Result<()> {
    let dumps = DumpDirs {
        saliency: args.save_saliency,
        weights: args.save_weights,
        keypoints: args.save_keypoints,
        responses: args.save_responses,
    };
    let cfg = args.config.config(dumps);
    let (fused, report) = run_pipeline(&args.inputs, &cfg)?;
    save_image(&args.out, &fused)?;
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    print_summary(&report);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn print_summary(report: &RunReport) {
    println!("reference: {} ({})", report.reference, report.images[report.reference].name);
    for entry in &report.images {
        match (&entry.registration, &entry.dropped) {
            (_, Some(why)) => println!("  {}: dropped ({why})", entry.name),
            (Some(reg), None) => println!(
                "  {}: {} keypoints, shift ({}, {}), accuracy {}",
                entry.name,
                entry.keypoints,
                reg.shift.0,
                reg.shift.1,
                reg.accuracy.map_or("-".to_string(), |a| format!("{a:.3}"))
            ),
            (None, None) => println!("  {}: {} keypoints", entry.name, entry.keypoints),
        }
    }
    println!(
        "time: {:.3} s compute, {:.3} s total",
        report.timings.compute, report.timings.total
    );
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let cfg = args.config.config(DumpDirs::default());
    let images = resolve_inputs(&args.inputs)?
        .iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            load_image(p).map(|img| (name, img))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = focusfuse::pipeline::sweep(&images, &cfg, &args.axes, args.out_dir.as_deref())?;
    if let Some(parent) = args.out_csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&args.out_csv, sweep_csv(&rows))?;
    println!("{} grid points written to {}", rows.len(), args.out_csv.display());
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let base = match &args.base {
        Some(path) => load_image(path)?,
        None => procedural_base(args.size, args.size, args.seed),
    };
    let stack = generate(&SyntheticSpec {
        base,
        n: args.n,
        max_shift: args.max_shift,
        sigma: args.sigma,
        seed: args.seed,
    })?;
    std::fs::create_dir_all(&args.out)?;
    let mut names = Vec::with_capacity(stack.images.len());
    for (i, img) in stack.images.iter().enumerate() {
        let name = format!("slice_{i:02}.png");
        save_image(&args.out.join(&name), img)?;
        names.push(name);
    }
    let truth = "truth.png".to_string();
    save_image(&args.out.join(&truth), &stack.truth)?;
    write_json(
        &args.out.join(MANIFEST),
        &Manifest {
            images: names,
            truth,
            meta: stack.meta,
        },
    )?;
    println!("{} images and ground truth written to {}", args.n, args.out.display());
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let manifest_path: PathBuf = match &args.manifest {
        Some(p) => p.clone(),
        None => args.truth.parent().unwrap_or(Path::new(".")).join(MANIFEST),
    };
    let manifest: Manifest = read_json(&manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let stack = manifest
        .images
        .iter()
        .map(|name| load_image(&dir.join(name)))
        .collect::<Result<Vec<Image>>>()?;
    let report: RunReport = read_json(&args.report)?;
    if report.images.len() != stack.len() {
        return Err(FuseError::InvalidConfig(format!(
            "report covers {} images but the manifest lists {}",
            report.images.len(),
            stack.len()
        )));
    }
    let fused = load_image(&args.fused)?;
    let truth = load_image(&args.truth)?;
    let quality = evaluate(&fused, &stack, &truth, &manifest.meta.shifts, &report)?;
    match &args.out_json {
        Some(path) => {
            write_json(path, &quality)?;
            println!(
                "fused RMSE {:.5} (best input {:.5}); written to {}",
                quality.fused_rmse,
                quality.min_input_rmse(),
                path.display()
            );
        }
        None => println!("{}", serde_json::to_string_pretty(&quality)?),
    }
    Ok(())
}
