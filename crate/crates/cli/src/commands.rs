use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use handseg::annotation::annotate;
use handseg::checkpoint::{decode_tensors, load_checkpoint};
use handseg::frame::{DepthMap, LabelMap};
use handseg::io::{
    base_dir, load_color_png, load_depth_png, load_label_png, save_color_png, save_depth_png, save_label_png,
    write_atomic, FrameRecord, Manifest, Status, MANIFEST_FILE,
};
use handseg::loss::evaluate_losses;
use handseg::metrics::ConfusionMatrix;
use handseg::net::ModelConfig;
use handseg::train::synth::{inject_color_noise, inject_sliver, synth_dataset};
use handseg::train::{self, FINAL_CHECKPOINT};
use handseg::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::args::*;

/// Failure of a well-formed command, reported with exit code 2.
#[derive(Debug)]
pub struct DataError(pub String);

impl<E: std::fmt::Display> From<E> for DataError {
    fn from(e: E) -> Self {
        DataError(e.to_string())
    }
}

pub type Outcome = Result<(), DataError>;

fn fail(msg: impl Into<String>) -> DataError {
    DataError(msg.into())
}

/// Applies `f` to every item on all available cores, keeping input order.
fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let chunk = items.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

fn frame_id(i: usize) -> String {
    format!("f{i:05}")
}

pub fn synth(a: &SynthArgs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut frames = synth_dataset(a.frames, a.size, a.size, &mut rng)?;
    for f in &mut frames {
        inject_color_noise(f, a.color_noise, &mut rng);
        for _ in 0..a.slivers {
            if inject_sliver(f, &mut rng).is_none() {
                log::warn!("no room for a sliver");
            }
        }
    }
    for sub in ["depth", "color", "label"] {
        fs::create_dir_all(a.out.join(sub)).map_err(|e| fail(format!("{}: {e}", a.out.join(sub).display())))?;
    }
    let mut records = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let id = frame_id(i);
        let rel = |sub: &str| PathBuf::from(sub).join(format!("{id}.png"));
        save_depth_png(a.out.join(rel("depth")), &f.depth)?;
        save_color_png(a.out.join(rel("color")), &f.color)?;
        save_label_png(a.out.join(rel("label")), &f.labels)?;
        records.push(FrameRecord {
            color: Some(rel("color")),
            label: Some(rel("label")),
            ..FrameRecord::new(id.clone(), rel("depth"))
        });
    }
    Manifest::new(records)?.save(a.out.join(MANIFEST_FILE))?;
    println!("wrote {} frames to {}", frames.len(), a.out.display());
    Ok(())
}

/// Path of a manifest entry as seen from `out_dir`: unchanged when both
/// directories coincide, otherwise absolute.
fn rebase(src_base: &Path, p: &Path, out_dir: &Path) -> Result<PathBuf, DataError> {
    if p.is_absolute() || fs::canonicalize(src_base).ok() == fs::canonicalize(out_dir).ok() {
        return Ok(p.to_path_buf());
    }
    let full = src_base.join(p);
    fs::canonicalize(&full).map_err(|e| fail(format!("{}: {e}", full.display())))
}

pub fn annotate_cmd(a: &AnnotateArgs) -> Outcome {
    let params = a.params();
    params.validate()?;
    let manifest = Manifest::load(&a.manifest)?;
    let base = base_dir(&a.manifest);
    fs::create_dir_all(a.out.join("auto")).map_err(|e| fail(format!("{}: {e}", a.out.display())))?;

    let results = par_map(manifest.records(), |r| -> Result<(FrameRecord, bool), DataError> {
        let color = r
            .color
            .as_ref()
            .ok_or_else(|| fail(format!("frame `{}` has no color image", r.id)))?;
        let depth = load_depth_png(base.join(&r.depth))?;
        let color_img = load_color_png(base.join(color))?;
        let ann = annotate(&depth, &color_img, &params).map_err(|e| fail(format!("frame `{}`: {e}", r.id)))?;
        let label = PathBuf::from("auto").join(format!("{}.png", r.id));
        save_label_png(a.out.join(&label), &ann.labels)?;
        let rec = FrameRecord {
            id: r.id.clone(),
            depth: rebase(&base, &r.depth, &a.out)?,
            color: Some(rebase(&base, color, &a.out)?),
            label: Some(label),
            status: Status::Auto,
        };
        Ok((rec, ann.needs_review))
    });
    let mut records = Vec::with_capacity(results.len());
    let mut flagged = 0;
    for r in results {
        let (rec, review) = r?;
        if review {
            log::warn!("frame `{}`: no hand found, needs review", rec.id);
            flagged += 1;
        }
        records.push(rec);
    }
    let n = records.len();
    Manifest::new(records)?.save(a.out.join(MANIFEST_FILE))?;
    println!("annotated {n} frames ({flagged} without a hand) into {}", a.out.display());
    Ok(())
}

struct Labelled {
    ids: Vec<String>,
    depth: Vec<DepthMap>,
    labels: Vec<LabelMap>,
}

/// Loads every non-rejected frame that has a label.
fn load_labelled(path: &Path) -> Result<Labelled, DataError> {
    let manifest = Manifest::load(path)?;
    let base = base_dir(path);
    let usable: Vec<&FrameRecord> = manifest
        .records()
        .iter()
        .filter(|r| r.status != Status::Rejected && r.label.is_some())
        .collect();
    if usable.is_empty() {
        return Err(fail(format!("{}: no labelled, non-rejected frames", path.display())));
    }
    let loaded = par_map(&usable, |r| -> Result<(DepthMap, LabelMap), DataError> {
        let depth = load_depth_png(base.join(&r.depth))?;
        let labels = load_label_png(base.join(r.label.as_ref().expect("filtered")))?;
        if (depth.width(), depth.height()) != (labels.width(), labels.height()) {
            return Err(fail(format!("frame `{}`: depth and label sizes differ", r.id)));
        }
        Ok((depth, labels))
    });
    let mut out = Labelled {
        ids: usable.iter().map(|r| r.id.clone()).collect(),
        depth: Vec::new(),
        labels: Vec::new(),
    };
    for l in loaded {
        let (d, lab) = l?;
        out.depth.push(d);
        out.labels.push(lab);
    }
    Ok(out)
}

pub fn train_cmd(a: &TrainArgs) -> Outcome {
    let cfg = a.train_config();
    cfg.validate()?;
    let data = load_labelled(&a.manifest)?;
    let (w, h) = (data.depth[0].width(), data.depth[0].height());
    if data.depth.iter().any(|d| (d.width(), d.height()) != (w, h)) {
        return Err(fail("training frames differ in size"));
    }
    let base = match a.preset {
        Preset::Toy => ModelConfig::toy(),
        Preset::Full => ModelConfig::full(),
    };
    let model_cfg = ModelConfig {
        input_height: h,
        input_width: w,
        attention: a.attention.into(),
        ..base
    };
    model_cfg.validate()?;
    fs::create_dir_all(&a.out).map_err(|e| fail(format!("{}: {e}", a.out.display())))?;
    write_atomic(&a.out.join("train.toml"), cfg.to_toml()?.as_bytes())?;
    log::info!("training on {} frames of {w}×{h}", data.depth.len());
    let outcome = train::train(&data.depth, &data.labels, &model_cfg, &cfg, Some(&a.out))?;
    let v = &outcome.final_validation;
    println!("phase 1 validation mean IOU = {:.2}", 100.0 * outcome.phase1.mean_iou);
    println!("final validation mean IOU = {:.2}", 100.0 * v.mean_iou);
    println!("final validation contour loss = {:.6}", v.contour);
    println!("checkpoint = {}", a.out.join(FINAL_CHECKPOINT).display());
    Ok(())
}

pub fn eval_cmd(a: &EvalArgs) -> Outcome {
    let gt = load_labelled(&a.manifest)?;
    let preds: Vec<LabelMap> = if let Some(ckpt) = &a.checkpoint {
        let model = load_checkpoint(ckpt)?;
        let batches: Vec<&[DepthMap]> = gt.depth.chunks(train::EVAL_BATCH).collect();
        let mut out = Vec::with_capacity(gt.depth.len());
        for b in par_map(&batches, |b| model.predict_frames(b)) {
            out.extend(b?);
        }
        out
    } else {
        let path = a.pred_manifest.as_ref().expect("clap requires one source");
        let pm = Manifest::load(path)?;
        let base = base_dir(path);
        let paths: Vec<PathBuf> = gt
            .ids
            .iter()
            .map(|id| {
                pm.get(id)
                    .and_then(|r| r.label.as_ref())
                    .map(|l| base.join(l))
                    .ok_or_else(|| fail(format!("{}: no predicted label for frame `{id}`", path.display())))
            })
            .collect::<Result<_, _>>()?;
        par_map(&paths, |p| load_label_png(p)).into_iter().collect::<Result<_, _>>()?
    };
    let mut cm = ConfusionMatrix::new();
    for ((p, g), id) in preds.iter().zip(&gt.labels).zip(&gt.ids) {
        cm.accumulate(p, g).map_err(|e| fail(format!("frame `{id}`: {e}")))?;
    }
    let report = cm.report(gt.labels.len())?;
    print!("{}", report.to_text());
    if let Some(json) = &a.json {
        write_atomic(json, serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(())
}

fn logits_from_file(path: &Path) -> Result<Tensor<f32>, DataError> {
    let bytes = fs::read(path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    let mut tensors = decode_tensors(&bytes).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    if tensors.len() == 1 {
        return Ok(tensors.remove(0).1);
    }
    tensors
        .into_iter()
        .find(|(n, _)| n == "logits")
        .map(|(_, t)| t)
        .ok_or_else(|| fail(format!("{}: expected a single tensor or one named `logits`", path.display())))
}

pub fn loss_cmd(a: &LossArgs) -> Outcome {
    let cfg = a.loss.config();
    cfg.validate()?;
    let labels = load_label_png(&a.label)?;
    let logits = match (&a.logits, &a.checkpoint, &a.depth) {
        (Some(p), _, _) => logits_from_file(p)?,
        (None, Some(ckpt), Some(depth)) => load_checkpoint(ckpt)?.infer(&[load_depth_png(depth)?])?,
        _ => unreachable!("clap enforces one logits source"),
    };
    let report = evaluate_losses(&logits.cast::<f64>(), &[labels], &cfg)?;
    println!("softmax_ce = {:.9}", report.softmax_ce);
    println!("contour = {:.9}", report.contour);
    println!("finetune = {:.9}", report.finetune);
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Outcome {
    let results = handseg::gradcheck::self_check(a.seed)?;
    let mut failed = Vec::new();
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAILED" };
        println!("{:<10} max relative error {:.3e} (tolerance {:.0e}) {verdict}", r.name, r.max_error, r.tolerance);
        if !r.passed() {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(fail(format!("gradient check failed for {}", failed.join(", "))))
    }
}

pub fn review_serve(a: &ReviewServeArgs) -> Outcome {
    let ip: IpAddr = a.host.parse().map_err(|e| fail(format!("--host {}: {e}", a.host)))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(handseg_review::serve(
        a.dataset.clone(),
        SocketAddr::new(ip, a.port),
        a.static_dir.clone(),
    ))?;
    Ok(())
}

pub fn export(a: &ExportArgs) -> Outcome {
    let m = handseg_review::export_accepted(&a.dataset, &a.out)?;
    println!("exported {} accepted frames to {}", m.len(), a.out.display());
    Ok(())
}
