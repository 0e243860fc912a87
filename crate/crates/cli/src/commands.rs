use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use c2b_core::frames::{list_frames, load_image, load_video, save_image, write_video};
use c2b_core::metrics::{direction_score, video_report, write_report_csv, SequenceReport};
use c2b_core::{
    encode_blurred, encode_coded, encode_two_bucket, pixel_shuffle_image, recover_lowres_coded, CodedImage,
    ExposureCode, FullyExposedImage, LowResVideo, TiledCode, VideoCube,
};
use c2b_model::ModelVariant;
use c2b_train::{load_checkpoint, load_clip_dataset, save_checkpoint, synth_dataset, SynthSpec, TrainConfig, Trainer};

use crate::failure::{Failure, Outcome};

const DEFAULT_TILE: usize = 3;
const DEFAULT_LEN: usize = 9;

pub fn parse_velocity(text: &str) -> Outcome<(i32, i32)> {
    let bad = || Failure::usage(format!("velocity '{text}' is not of the form x,y"));
    let (x, y) = text.split_once(',').ok_or_else(bad)?;
    Ok((x.trim().parse().map_err(|_| bad())?, y.trim().parse().map_err(|_| bad())?))
}

fn load_code(path: Option<&Path>) -> Outcome<ExposureCode> {
    Ok(match path {
        Some(p) => ExposureCode::read(p)?,
        None => ExposureCode::impulse(DEFAULT_TILE, DEFAULT_LEN)?,
    })
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

pub fn gen_data(spec: &SynthSpec, out: &Path) -> Outcome {
    let data = synth_dataset(spec)?;
    for (i, clip) in data.clips.iter().enumerate() {
        write_video(&out.join(format!("clip_{i:04}")), clip)?;
    }
    eprintln!("wrote {} clips to {}", data.len(), out.display());
    Ok(())
}

pub fn simulate(frames: &Path, code: Option<&Path>, out: &Path, buckets: bool) -> Outcome {
    let video = load_video(frames)?;
    let code = load_code(code)?;
    if video.len() != code.len() {
        return Err(Failure::data(format!(
            "{} holds {} frames but the code has {} sub-exposures",
            frames.display(),
            video.len(),
            code.len()
        )));
    }
    let tiled = TiledCode::new(&code, video.height(), video.width())?;
    let coded = encode_coded(&video, &tiled)?;
    let blurred = encode_blurred(&video);

    create_dir(out)?;
    save_image(&out.join("coded.png"), &coded.values)?;
    save_image(&out.join("blurred.png"), &blurred.values)?;
    code.write(&out.join("code.txt"))?;
    let mut manifest = format!(
        "height = {}\nwidth = {}\nframes = {}\ntile = {}\ncode = \"code.txt\"\ncoded = \"coded.png\"\nblurred = \"blurred.png\"\n",
        video.height(),
        video.width(),
        video.len(),
        code.tile_size()
    );
    if buckets {
        let pair = encode_two_bucket(&video, &tiled)?;
        save_image(&out.join("bucket1.png"), &pair.bucket1.values)?;
        save_image(&out.join("bucket0.png"), &pair.bucket0.values)?;
        manifest.push_str("bucket1 = \"bucket1.png\"\nbucket0 = \"bucket0.png\"\n");
    }
    write_text(&out.join("manifest.toml"), &manifest)
}

/// An observed image on disk.
pub enum Capture {
    Coded(PathBuf),
    Blurred(PathBuf),
}

fn lowres_from_coded(path: &Path, code: &ExposureCode) -> Outcome<LowResVideo> {
    let plane = load_image(path)?;
    let tiled = TiledCode::new(code, plane.height(), plane.width())?;
    let coded = CodedImage::from_values(plane, &tiled)?;
    Ok(recover_lowres_coded(&coded, &tiled)?)
}

fn lowres_from_blurred(path: &Path, code: &ExposureCode) -> Outcome<LowResVideo> {
    let image = FullyExposedImage::new(load_image(path)?);
    Ok(pixel_shuffle_image(&image, code.tile_size())?)
}

pub fn invert(input: &Capture, code: Option<&Path>, out: &Path) -> Outcome {
    let code = load_code(code)?;
    let video = match input {
        Capture::Coded(p) => lowres_from_coded(p, &code)?,
        Capture::Blurred(p) => lowres_from_blurred(p, &code)?,
    };
    write_video(out, &video)?;
    Ok(())
}

pub struct TrainRequest {
    pub config: PathBuf,
    pub frames: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub variant: Option<ModelVariant>,
    pub code: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub save_every: Option<u64>,
}

pub fn train(req: &TrainRequest) -> Outcome {
    let mut config = TrainConfig::from_file(&req.config, &req.overrides)?;
    if let Some(seed) = req.seed {
        config.seed = seed;
    }
    if let Some(v) = req.variant {
        config = config.with_variant(v);
    }
    config.validate()?;
    if req.save_every == Some(0) {
        return Err(Failure::usage("--save-every must be at least 1"));
    }
    let code = match &req.code {
        Some(p) => ExposureCode::read(p)?,
        None => ExposureCode::impulse(config.model.n, config.model.t)?,
    };
    let stride = config.clip_stride.unwrap_or(config.model.t);
    let dataset = load_clip_dataset(&req.frames, config.model.t, stride)?;
    let mut trainer = Trainer::new(config.clone(), &code, &dataset)?;
    create_dir(&req.out)?;
    let checkpoint = req.out.join("model.c2b");
    let log = req.out.join("loss.csv");

    let total = trainer.total_steps();
    eprintln!(
        "training {} model on {} examples: {} steps of batch {}",
        config.model.variant,
        trainer.num_examples(),
        total,
        config.batch
    );
    let every = (total / 20).max(1);
    while !trainer.is_done() {
        let record = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                write_text(&log, &c2b_train::format_loss_log(trainer.history()))?;
                return Err(e.into());
            }
        };
        if record.step % every == 0 || record.step == total {
            eprintln!("step {}/{} epoch {} loss {:.6}", record.step, total, record.epoch, record.loss);
        }
        if req.save_every.is_some_and(|k| record.step % k == 0) {
            save_checkpoint(&checkpoint, &config, &code, trainer.state())?;
        }
    }
    save_checkpoint(&checkpoint, &config, &code, trainer.state())?;
    write_text(&log, &c2b_train::format_loss_log(trainer.history()))?;
    eprintln!("wrote {} and {}", checkpoint.display(), log.display());
    Ok(())
}

fn check_inputs(variant: ModelVariant, coded: bool, blurred: bool) -> Outcome {
    let (need_c, need_b) = match variant {
        ModelVariant::Pair => (true, true),
        ModelVariant::CodedOnly => (true, false),
        ModelVariant::BlurredOnly => (false, true),
    };
    let describe = |c: bool, b: bool| match (c, b) {
        (true, true) => "--coded and --blurred",
        (true, false) => "--coded only",
        (false, true) => "--blurred only",
        (false, false) => "no image",
    };
    if (coded, blurred) != (need_c, need_b) {
        return Err(Failure::usage(format!(
            "a {variant} checkpoint takes {}, got {}",
            describe(need_c, need_b),
            describe(coded, blurred)
        )));
    }
    Ok(())
}

pub fn reconstruct(checkpoint: &Path, coded: Option<&Path>, blurred: Option<&Path>, out: &Path) -> Outcome {
    let ck = load_checkpoint(checkpoint)?;
    let config = ck.config()?;
    check_inputs(config.model.variant, coded.is_some(), blurred.is_some())?;
    let model = ck.model()?;
    let code = ck.code()?;
    let xc = coded.map(|p| lowres_from_coded(p, &code)).transpose()?;
    let xf = blurred.map(|p| lowres_from_blurred(p, &code)).transpose()?;
    let video = model.reconstruct(xc.as_ref(), xf.as_ref())?;
    write_video(out, &video)?;
    Ok(())
}

fn has_frames(dir: &Path) -> Outcome<bool> {
    if !dir.is_dir() {
        return Err(Failure::data(format!("{} is not a directory", dir.display())));
    }
    Ok(list_frames(dir).is_ok_and(|f| !f.is_empty()))
}

fn subdirs(dir: &Path) -> Outcome<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Failure::io(dir, e))? {
        let path = entry.map_err(|e| Failure::io(dir, e))?.path();
        if path.is_dir() {
            out.push((path.file_name().unwrap_or_default().to_string_lossy().into_owned(), path));
        }
    }
    out.sort();
    Ok(out)
}

/// Pairs predicted and true sequences: either both directories hold frames
/// directly, or sequences are matched by subdirectory name.
fn pair_sequences(pred: &Path, truth: &Path) -> Outcome<Vec<(String, PathBuf, PathBuf)>> {
    match (has_frames(pred)?, has_frames(truth)?) {
        (true, true) => {
            let id = truth.file_name().unwrap_or_default().to_string_lossy().into_owned();
            Ok(vec![(id, pred.to_path_buf(), truth.to_path_buf())])
        }
        (false, false) => {
            let seqs = subdirs(truth)?;
            if seqs.is_empty() {
                return Err(Failure::data(format!("no frames under {}", truth.display())));
            }
            seqs.into_iter()
                .map(|(id, t)| {
                    let p = pred.join(&id);
                    if !p.is_dir() {
                        return Err(Failure::data(format!("no prediction for sequence '{id}' in {}", pred.display())));
                    }
                    Ok((id, p, t))
                })
                .collect()
        }
        _ => Err(Failure::data(
            "one of --pred/--truth holds frames and the other holds sequence directories",
        )),
    }
}

fn load_pair(pred: &Path, truth: &Path) -> Outcome<(VideoCube, VideoCube)> {
    let p = load_video(pred)?;
    let t = load_video(truth)?;
    if p.len() != t.len() {
        return Err(Failure::data(format!(
            "{} has {} frames, {} has {}",
            pred.display(),
            p.len(),
            truth.display(),
            t.len()
        )));
    }
    Ok((p, t))
}

pub fn eval(pred: &Path, truth: &Path, out: Option<&Path>) -> Outcome {
    let mut rows = Vec::new();
    for (id, p, t) in pair_sequences(pred, truth)? {
        let (p, t) = load_pair(&p, &t)?;
        let report = video_report(&p, &t)?;
        let direction = direction_score(&p, &t)?;
        rows.push((id, report, direction));
    }
    let seqs: Vec<SequenceReport<'_>> = rows
        .iter()
        .map(|(id, report, d)| SequenceReport {
            id,
            report,
            direction: Some(*d),
        })
        .collect();
    let mut buf = Vec::new();
    write_report_csv(&mut buf, &seqs)?;
    match out {
        Some(path) => fs::write(path, &buf).map_err(|e| Failure::io(path, e)),
        None => std::io::stdout()
            .write_all(&buf)
            .map_err(|e| Failure::data(format!("stdout: {e}"))),
    }
}

pub fn attention(checkpoint: &Path, coded: &Path, blurred: &Path, out: &Path) -> Outcome {
    let ck = load_checkpoint(checkpoint)?;
    let model = ck.model()?;
    let code = ck.code()?;
    let xc = lowres_from_coded(coded, &code)?;
    let xf = lowres_from_blurred(blurred, &code)?;
    let map = model.attention(&xc, &xf)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_image(out, &map.normalized_plane()?)?;
    Ok(())
}

pub fn gradcheck(seed: u64) -> Outcome {
    let mut results = c2b_nn::gradcheck::op_suite(seed)?;
    results.push(c2b_model::gradcheck::end_to_end_check(seed, 24)?);
    print!("{}", c2b_nn::gradcheck::format_report(&results));
    let failed = results.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(Failure::numerical(format!("{failed} gradient checks failed")));
    }
    Ok(())
}
