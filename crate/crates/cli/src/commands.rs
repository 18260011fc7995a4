use std::fs;
use std::path::{Path, PathBuf};

use dynfire::data::{
    generate_dataset, ingest_csv_rasters, min_weeks, truth_from_fire_channel, Dataset, IngestManifest, StackHeader,
};
use dynfire::eval::{
    carried_state, compare_models, score_predictions, stream_predictions, write_risk_png, EvalReport, REPORT_COLUMNS,
};
use dynfire::frames::{FireMap, LabelledSequence};
use dynfire::model::{manifest_path, Checkpoint, Dims, Model};
use dynfire::training::{resume_run, train_run, write_csv_rows};
use dynfire::{Error, Result};

use crate::config::RunConfig;

pub fn synth(config: &RunConfig) -> Result<()> {
    let min = min_weeks(config.train.window, config.train.dims.horizon);
    if config.weeks < min {
        return Err(Error::Config(format!(
            "{} weeks requested; at least K + T + 10 = {min} are needed",
            config.weeks
        )));
    }
    let out = config.out_dir();
    let data: Dataset = generate_dataset(&config.sim, config.weeks, config.seed)?.into();
    fs::create_dir_all(&out)?;
    data.write(&out)?;
    config.write_snapshot(&out)?;
    println!("wrote {} weeks to {}", data.len(), out.display());
    Ok(())
}

pub fn ingest(config: &RunConfig) -> Result<()> {
    let raw = config
        .raw
        .as_deref()
        .ok_or_else(|| Error::Config("`ingest` needs a raster directory (--dir)".into()))?;
    let manifest_file = config
        .manifest
        .as_deref()
        .ok_or_else(|| Error::Config("`ingest` needs a manifest (--manifest)".into()))?;
    let manifest = IngestManifest::read(manifest_file)?;
    let (obs, qa) = ingest_csv_rasters(raw, &manifest)?;
    let truth = truth_from_fire_channel(&obs)?;
    let data = Dataset::new(obs, truth)?;
    let out = config.out_dir();
    fs::create_dir_all(&out)?;
    data.write(&out)?;
    let mut qa_text = serde_json::to_string_pretty(&qa)?;
    qa_text.push('\n');
    fs::write(out.join("qa.json"), qa_text)?;
    config.write_snapshot(&out)?;
    println!(
        "ingested {} weeks from {} files ({} forward-filled) into {}",
        qa.weeks,
        qa.files_read,
        qa.forward_fill_count(),
        out.display()
    );
    Ok(())
}

pub fn split(config: &RunConfig) -> Result<()> {
    let data = Dataset::read(config.require_data()?)?;
    let (train, val) = data.split(config.ratio)?;
    let out = config.out_dir();
    train.write(&out.join("train"))?;
    val.write(&out.join("val"))?;
    config.write_snapshot(&out)?;
    println!("train {} weeks, validation {} weeks in {}", train.len(), val.len(), out.display());
    Ok(())
}

fn check_header(d: &Dims, header: &StackHeader) -> Result<()> {
    let got = (header.channels, header.height, header.width);
    if got != (d.channels, d.height, d.width) {
        return Err(Error::Config(format!(
            "dataset is {got:?} (channels, height, width) but the model is configured for {:?}",
            (d.channels, d.height, d.width)
        )));
    }
    Ok(())
}

pub fn train(config: &RunConfig) -> Result<()> {
    let data = Dataset::read(config.require_data()?)?;
    check_header(&config.train.dims, &data.obs.header)?;
    let resume = config.resume.as_deref().map(load_checkpoint).transpose()?;
    let seq = data.sequence()?;
    let out = config.out_dir();
    config.write_snapshot(&out)?;
    let state = match &resume {
        Some(ck) => resume_run(config.train.clone(), &seq, ck, Some(&out))?,
        None => train_run(config.train.clone(), &seq, Some(&out))?,
    };
    match state.history.last() {
        Some(r) => println!(
            "{} iterations; last l_pred {:.5}{}; checkpoint {}",
            state.n,
            r.l_pred,
            r.l_sys.map(|v| format!(", l_sys {v:.5}")).unwrap_or_default(),
            out.join("final.json").display()
        ),
        None => println!("0 iterations; initial checkpoint {}", out.join("final.json").display()),
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let manifest = manifest_path(path);
    if !manifest.is_file() {
        return Err(Error::Config(format!("checkpoint {} not found", manifest.display())));
    }
    Checkpoint::read(&manifest)
}

struct Streams {
    history: Option<LabelledSequence>,
    val: LabelledSequence,
    stream_id: String,
    header: StackHeader,
}

fn load_streams(config: &RunConfig) -> Result<Streams> {
    let dir = config.require_data()?;
    let val_dir = dir.join("val");
    if !val_dir.is_dir() {
        return Err(Error::Config(format!(
            "{} has no val/ directory; run `dynfire split` first",
            dir.display()
        )));
    }
    let val = Dataset::read(&val_dir)?;
    let history = if config.cold {
        None
    } else {
        let train_dir = dir.join("train");
        if !train_dir.is_dir() {
            return Err(Error::Config(format!(
                "carrying the state needs {}; pass --cold to start from zero",
                train_dir.display()
            )));
        }
        let train = Dataset::read(&train_dir)?.sequence()?;
        let next = train.first_week().unwrap_or(0) + train.len() as i64;
        if next != val.obs.header.first_week {
            return Err(Error::Config("train/ does not end right before val/ begins".into()));
        }
        Some(train)
    };
    Ok(Streams {
        history,
        stream_id: val.obs.fingerprint()?,
        header: val.obs.header.clone(),
        val: val.sequence()?,
    })
}

fn score(model: &Model<f32>, name: &str, s: &Streams) -> Result<(EvalReport, Vec<FireMap>)> {
    let h0 = match &s.history {
        Some(history) => carried_state(model, history)?,
        None => model.zero_state(s.val.first_week().unwrap_or(0)),
    };
    let preds = stream_predictions(model, &s.val, &h0)?;
    let t = model.dims.horizon;
    let targets: Vec<&FireMap> = s.val.fires[t..t + preds.len()].iter().map(|f| f.as_ref()).collect();
    let report = score_predictions(name, &preds, &targets, &s.stream_id)?;
    Ok((report, preds))
}

fn png_name(header: &StackHeader, week: i64) -> String {
    match header.date_of(week) {
        Some(d) => format!("risk-{d}.png"),
        None => format!("risk-week{week}.png"),
    }
}

fn write_pngs(dir: &Path, header: &StackHeader, maps: &[FireMap]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for m in maps {
        write_risk_png(m, &dir.join(png_name(header, m.week)))?;
    }
    Ok(())
}

fn report_row(r: &EvalReport, best: bool) -> [String; 7] {
    [
        r.name.clone(),
        r.frames.to_string(),
        r.total_bce.to_string(),
        r.mean_pixel_bce.to_string(),
        r.auroc.map_or_else(|| "N/A".into(), |v| v.to_string()),
        r.positive_rate.to_string(),
        u8::from(best).to_string(),
    ]
}

pub fn evaluate(config: &RunConfig) -> Result<()> {
    let [path] = config.checkpoints.as_slice() else {
        return Err(Error::Config("`evaluate` takes exactly one --checkpoint; use `compare` for several".into()));
    };
    let ck = load_checkpoint(path)?;
    let streams = load_streams(config)?;
    check_header(&ck.model.dims, &streams.header)?;
    let (report, preds) = score(&ck.model, ck.model.variant.as_str(), &streams)?;
    let out = config.out_dir();
    fs::create_dir_all(&out)?;
    write_csv_rows(&out.join("report.csv"), &REPORT_COLUMNS, [report_row(&report, true)])?;
    if config.all_weeks {
        write_pngs(&out.join("maps"), &streams.header, &preds)?;
    }
    config.write_snapshot(&out)?;
    println!(
        "{}: {} frames, total BCE {:.4}, mean BCE {:.6}, AUROC {}",
        report.name,
        report.frames,
        report.total_bce,
        report.mean_pixel_bce,
        report.auroc.map_or_else(|| "N/A".into(), |v| format!("{v:.4}"))
    );
    Ok(())
}

/// Row labels: the variant name, qualified by the file name when two
/// checkpoints share a variant.
fn report_names(paths: &[PathBuf], cks: &[Checkpoint]) -> Vec<String> {
    cks.iter()
        .zip(paths)
        .map(|(ck, p)| {
            let v = ck.model.variant;
            if cks.iter().filter(|c| c.model.variant == v).count() > 1 {
                format!("{v} ({})", p.display())
            } else {
                v.to_string()
            }
        })
        .collect()
}

pub fn compare(config: &RunConfig) -> Result<()> {
    if config.checkpoints.len() < 2 {
        return Err(Error::Config("`compare` needs at least two --checkpoint paths".into()));
    }
    let cks = config
        .checkpoints
        .iter()
        .map(|p| load_checkpoint(p))
        .collect::<Result<Vec<_>>>()?;
    let streams = load_streams(config)?;
    let names = report_names(&config.checkpoints, &cks);
    let out = config.out_dir();
    let mut reports = Vec::with_capacity(cks.len());
    for (ck, name) in cks.iter().zip(&names) {
        check_header(&ck.model.dims, &streams.header)?;
        let (report, preds) = score(&ck.model, name, &streams)?;
        if config.all_weeks {
            write_pngs(&out.join("maps").join(ck.model.variant.as_str()), &streams.header, &preds)?;
        }
        reports.push(report);
    }
    let comparison = compare_models(reports)?;
    fs::create_dir_all(&out)?;
    comparison.write_csv(&out.join("comparison.csv"))?;
    let table = comparison.table();
    fs::write(out.join("comparison.txt"), &table)?;
    config.write_snapshot(&out)?;
    print!("{table}");
    Ok(())
}

pub fn predict(config: &RunConfig) -> Result<()> {
    let [path] = config.checkpoints.as_slice() else {
        return Err(Error::Config("`predict` takes exactly one --checkpoint".into()));
    };
    let ck = load_checkpoint(path)?;
    let model = &ck.model;
    if config.horizon != model.dims.horizon {
        return Err(Error::Config(format!(
            "requested horizon {} but the checkpoint predicts {} weeks ahead",
            config.horizon, model.dims.horizon
        )));
    }
    let data = Dataset::read(config.require_data()?)?;
    check_header(&model.dims, &data.obs.header)?;
    let frames = data.obs.frames();
    let mut h = model.zero_state(data.obs.header.first_week);
    let mut maps = Vec::new();
    for f in &frames {
        h = model.step(&h, f)?;
        if config.all_weeks {
            maps.push(model.decode_fire(&h)?);
        }
    }
    let last = model.decode_fire(&h)?;
    if !config.all_weeks {
        maps.push(last.clone());
    }
    let out = config.out_dir();
    write_pngs(&out, &data.obs.header, &maps)?;
    write_csv_grid(&out.join("risk.csv"), &last)?;
    config.write_snapshot(&out)?;
    let date = data
        .obs
        .header
        .date_of(last.week)
        .map_or_else(|| format!("week {}", last.week), |d| d.to_string());
    let peak = last.data.iter().copied().fold(0.0f32, f32::max);
    println!("risk map for {date} written to {} (peak risk {peak:.3})", out.display());
    Ok(())
}

fn write_csv_grid(path: &Path, map: &FireMap) -> Result<()> {
    let mut text = String::new();
    for row in map.data.chunks(map.width) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}
