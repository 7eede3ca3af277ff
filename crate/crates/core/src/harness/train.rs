use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::augment::{apply_augmentation, sample_pairing, MixKind, MixedBatch};
use crate::data::{basic_transforms, batch_iter, generate_synthetic, load_dataset, Dataset, Sample};
use crate::distill::{
    mixed_ce, mixed_ce_grad, student_dlogits, teacher_dlogits, total_loss, HardTargets,
    LogitsQuad, LossBreakdown,
};
use crate::error::{CekdError, Result};
use crate::harness::config::{ExperimentConfig, TrainMode};
use crate::harness::metrics::{MetricsRecord, Summary};
use crate::model::{
    backward_batch, cam, forward, forward_batch, init_params, load_checkpoint, lr_schedule,
    save_checkpoint, sgd_step, Checkpoint, NetConfig, OptState, Params,
};
use crate::numerics::{RngStream, Tensor};
use crate::parallel::map_indexed;

/// One network plus its optimizer state.
#[derive(Debug, Clone)]
pub struct NetState {
    pub params: Params,
    pub opt: OptState,
}

impl NetState {
    pub fn init(config: &NetConfig, seed: u64) -> Result<NetState> {
        let mut rng = RngStream::new(seed);
        Ok(NetState {
            params: init_params(config, &mut rng)?,
            opt: OptState::new(config),
        })
    }
}

/// Raw CAM of `(image, class)` upsampled to image resolution.
pub fn cam_at_image_res(
    params: &Params,
    config: &NetConfig,
    image: &Tensor,
    class: usize,
) -> Result<Tensor> {
    let trace = forward(params, config, image)?;
    let raw = cam(params, &trace, class)?;
    let (fh, fw) = (raw.shape()[0], raw.shape()[1]);
    let hw = config.input_hw;
    let up = crate::augment::region_transform(&raw.reshape(&[1, fh, fw])?, hw, hw)?;
    up.reshape(&[hw, hw])
}

/// Top-1 accuracy on clean, untransformed images.
pub fn evaluate(params: &Params, config: &NetConfig, samples: &[&Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(CekdError::invalid("cannot evaluate on an empty set"));
    }
    let hits = map_indexed(samples.len(), |i| -> Result<usize> {
        let trace = forward(params, config, &samples[i].image)?;
        let pred = argmax(trace.logits.data());
        Ok((pred == samples[i].label) as usize)
    });
    let mut correct = 0;
    for h in hits {
        correct += h?;
    }
    Ok(correct as f64 / samples.len() as f64)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn mix_branch(
    images: &[Tensor],
    labels: &[usize],
    pairing: &[usize],
    method: &crate::augment::MixMethod,
    teacher_params: &Params,
    net: &NetConfig,
    rng: &RngStream,
) -> Result<MixedBatch> {
    if method.kind == MixKind::SnapMix {
        let provider = |image: &Tensor, class: usize| {
            cam_at_image_res(teacher_params, net, image, class)
        };
        apply_augmentation(images, labels, pairing, method, Some(&provider), rng)
    } else {
        apply_augmentation(images, labels, pairing, method, None, rng)
    }
}

fn apply_grads(
    state: &mut NetState,
    net: &NetConfig,
    traces_a: &[crate::model::ForwardTrace],
    dlogits_a: &Tensor,
    traces_b: Option<(&[crate::model::ForwardTrace], &Tensor)>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let mut grads = backward_batch(&state.params, net, traces_a, dlogits_a)?;
    if let Some((traces, dlogits)) = traces_b {
        let extra = backward_batch(&state.params, net, traces, dlogits)?;
        grads.add_scaled(&extra, 1.0);
    }
    sgd_step(&mut state.params, &grads, &mut state.opt, lr, momentum)
}

/// One optimization step for both networks on one raw batch.
///
/// Builds one pairing shared by both branches, mixes the h1 batch with the
/// teacher's method and the h2 batch with the student's, cross-feeds both
/// networks, and steps each on its own total.
pub fn train_step(
    images: &[Tensor],
    labels: &[usize],
    teacher: &mut NetState,
    student: &mut NetState,
    config: &ExperimentConfig,
    lr: f64,
    step_rng: &RngStream,
) -> Result<LossBreakdown> {
    if images.len() < 2 {
        return Err(CekdError::invalid("train_step needs a batch of >= 2"));
    }
    let net = &config.net;
    let mut pairing_rng = step_rng.child("pairing");
    let pairing = sample_pairing(images.len(), &mut pairing_rng);

    let h1 = mix_branch(
        images, labels, &pairing, &config.teacher_method,
        &teacher.params, net, &step_rng.child("h1"),
    )?;
    let h2 = mix_branch(
        images, labels, &pairing, &config.student_method,
        &teacher.params, net, &step_rng.child("h2"),
    )?;
    let h1_images = h1.images()?;
    let h2_images = h2.images()?;

    let (t1, t1_traces) = forward_batch(&teacher.params, net, &h1_images)?;
    let (t2, t2_traces) = forward_batch(&teacher.params, net, &h2_images)?;
    let (s1, s1_traces) = forward_batch(&student.params, net, &h2_images)?;
    let (s2, s2_traces) = forward_batch(&student.params, net, &h1_images)?;

    let quad = LogitsQuad { t1, t2, s1, s2 };
    let h1_targets = HardTargets::from(&h1);
    let h2_targets = HardTargets::from(&h2);
    let weights = config.loss_weights();
    let breakdown = total_loss(&quad, &h1_targets, &h2_targets, &weights)?;
    if !breakdown.total_teacher.is_finite() || !breakdown.total_student.is_finite() {
        return Err(CekdError::Numeric("non-finite loss".into()));
    }

    let (dt1, dt2) = teacher_dlogits(&quad, &h1_targets, &h2_targets, &weights)?;
    let (ds1, ds2) = student_dlogits(&quad, &h1_targets, &h2_targets, &weights)?;

    apply_grads(teacher, net, &t1_traces, &dt1, Some((&t2_traces, &dt2)), lr, config.momentum)?;
    apply_grads(student, net, &s1_traces, &ds1, Some((&s2_traces, &ds2)), lr, config.momentum)?;

    if !teacher.params.all_finite() || !student.params.all_finite() {
        return Err(CekdError::Numeric("non-finite parameters after step".into()));
    }
    Ok(breakdown)
}

/// One step of the single-network baseline: the teacher trained on its own
/// augmentation with mixed cross entropy only.
fn single_step(
    images: &[Tensor],
    labels: &[usize],
    teacher: &mut NetState,
    config: &ExperimentConfig,
    lr: f64,
    step_rng: &RngStream,
) -> Result<LossBreakdown> {
    let net = &config.net;
    let mut pairing_rng = step_rng.child("pairing");
    let pairing = sample_pairing(images.len(), &mut pairing_rng);
    let h1 = mix_branch(
        images, labels, &pairing, &config.teacher_method,
        &teacher.params, net, &step_rng.child("h1"),
    )?;
    let h1_images = h1.images()?;
    let (t1, t1_traces) = forward_batch(&teacher.params, net, &h1_images)?;
    let targets = HardTargets::from(&h1);
    let ce = mixed_ce(&t1, &targets)?;
    if !ce.is_finite() {
        return Err(CekdError::Numeric("non-finite loss".into()));
    }
    let mut dt1 = mixed_ce_grad(&t1, &targets)?;
    dt1.scale(config.ce_weight);
    apply_grads(teacher, net, &t1_traces, &dt1, None, lr, config.momentum)?;
    Ok(LossBreakdown {
        l_kd_h1: 0.0,
        l_kd_h2: 0.0,
        l_kd_t1: 0.0,
        l_kd_t2: 0.0,
        l_kd_s1: 0.0,
        l_kd_s2: 0.0,
        l_ce_teacher_h1: ce,
        l_ce_teacher_h2: 0.0,
        l_ce_student_h1: 0.0,
        l_ce_student_h2: 0.0,
        total_teacher: config.ce_weight * ce,
        total_student: 0.0,
    })
}

fn resolve_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    match &config.dataset_path {
        Some(path) => load_dataset(Path::new(path)),
        None => generate_synthetic(&config.dataset),
    }
}

/// Run a full experiment, writing config.json, metrics.jsonl, checkpoints
/// and summary.json into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<Summary> {
    let started = Instant::now();
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    // fail before training if the directory is not writable
    let probe = out_dir.join(".write_probe");
    fs::write(&probe, b"ok")?;
    fs::remove_file(&probe)?;

    let dataset = resolve_dataset(config)?;
    config.save(&out_dir.join("config.json"))?;

    let train_samples = dataset.train_samples();
    let test_samples = dataset.test_samples();
    if train_samples.is_empty() || test_samples.is_empty() {
        return Err(CekdError::Config("dataset has an empty split".into()));
    }

    let mut teacher = NetState::init(&config.net, config.seeds.teacher_init)?;
    let mut student = match config.train_mode {
        TrainMode::Cekd => Some(NetState::init(&config.net, config.seeds.student_init)?),
        TrainMode::SingleTeacher => None,
    };
    let train_rng = RngStream::new(config.seeds.train);

    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics = BufWriter::new(File::create(&metrics_path)?);
    let write_record = |metrics: &mut BufWriter<File>, r: &MetricsRecord| -> Result<()> {
        let line = serde_json::to_string(r).map_err(|e| CekdError::Config(e.to_string()))?;
        metrics.write_all(line.as_bytes())?;
        metrics.write_all(b"\n")?;
        Ok(())
    };

    let mut global_step = 0u64;
    let mut best_teacher = 0.0f64;
    let mut best_student: Option<f64> = None;
    let mut final_teacher = 0.0f64;
    let mut final_student: Option<f64> = None;

    for epoch in 0..config.epochs {
        let lr = lr_schedule(epoch, config.base_lr, config.lr_decay_every, config.lr_factor);
        let batches = batch_iter(
            train_samples.len(),
            config.batch_size,
            config.seeds.data,
            epoch,
        )?;
        let epoch_rng = train_rng.child_indexed("epoch", epoch);
        for (batch_idx, batch) in batches.iter().enumerate() {
            let step_rng = epoch_rng.child_indexed("batch", batch_idx as u64);
            let images: Vec<Tensor> = batch
                .iter()
                .enumerate()
                .map(|(k, &idx)| {
                    let mut trng = step_rng.child_indexed("transform", k as u64);
                    basic_transforms(&train_samples[idx].image, &mut trng)
                })
                .collect();
            let labels: Vec<usize> = batch.iter().map(|&idx| train_samples[idx].label).collect();

            let result = match &mut student {
                Some(student) => train_step(
                    &images, &labels, &mut teacher, student, config, lr, &step_rng,
                ),
                None => single_step(&images, &labels, &mut teacher, config, lr, &step_rng),
            };
            let breakdown = result.map_err(|e| match e {
                CekdError::Numeric(msg) => CekdError::Numeric(format!(
                    "{msg} (epoch {epoch}, step {global_step})"
                )),
                other => other,
            })?;
            write_record(&mut metrics, &MetricsRecord::step(epoch, global_step, breakdown, lr))?;
            global_step += 1;
        }

        let teacher_acc = evaluate(&teacher.params, &config.net, &test_samples)?;
        let student_acc = match &student {
            Some(s) => Some(evaluate(&s.params, &config.net, &test_samples)?),
            None => None,
        };
        write_record(
            &mut metrics,
            &MetricsRecord::eval(epoch, global_step, teacher_acc, student_acc, lr),
        )?;
        metrics.flush()?;

        best_teacher = best_teacher.max(teacher_acc);
        if let Some(sa) = student_acc {
            best_student = Some(best_student.unwrap_or(0.0).max(sa));
        }
        final_teacher = teacher_acc;
        final_student = student_acc;
    }
    metrics.flush()?;

    save_checkpoint(
        &out_dir.join("teacher.ckpt"),
        &Checkpoint {
            config: config.net.clone(),
            seed_lineage: vec![config.seeds.teacher_init, config.seeds.train],
            params: teacher.params,
        },
    )?;
    if let Some(student) = student {
        save_checkpoint(
            &out_dir.join("student.ckpt"),
            &Checkpoint {
                config: config.net.clone(),
                seed_lineage: vec![config.seeds.student_init, config.seeds.train],
                params: student.params,
            },
        )?;
    }

    let summary = Summary {
        best_teacher_acc: best_teacher,
        best_student_acc: best_student,
        final_teacher_acc: final_teacher,
        final_student_acc: final_student,
        epochs: config.epochs,
        total_wall_ms: started.elapsed().as_millis() as u64,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CekdError::Config(e.to_string()))?;
    let tmp = out_dir.join("summary.json.tmp");
    fs::write(&tmp, json)?;
    fs::rename(&tmp, out_dir.join("summary.json"))?;
    Ok(summary)
}

/// Emit a CAM heatmap PGM for every test image of a dataset, with one
/// sidecar line per image recording the predicted class, its logit, and the
/// mean-CAM versus logit-minus-bias identity.
pub fn emit_cam(checkpoint_path: &Path, data_dir: &Path, out_dir: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint_path)?;
    let dataset = load_dataset(data_dir)?;
    fs::create_dir_all(out_dir)?;
    let mut sidecar = String::from("id\tpred_class\tlogit\tcam_mean\tlogit_minus_bias\n");
    for sample in dataset.test_samples() {
        let trace = forward(&ckpt.params, &ckpt.config, &sample.image)?;
        let pred = argmax(trace.logits.data());
        let raw = cam(&ckpt.params, &trace, pred)?;
        let cam_mean = raw.data().iter().sum::<f64>() / raw.len() as f64;
        let logit = trace.logits.data()[pred];
        let bias = ckpt.params.fc_bias.data()[pred];

        // min-max normalize, flat map when the range is zero
        let lo = raw.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = raw.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let normalized = if hi - lo > 0.0 {
            raw.map(|v| (v - lo) / (hi - lo))
        } else {
            Tensor::zeros(raw.shape())
        };
        let (fh, fw) = (normalized.shape()[0], normalized.shape()[1]);
        let hw = ckpt.config.input_hw;
        let up = crate::augment::region_transform(&normalized.reshape(&[1, fh, fw])?, hw, hw)?;
        crate::data::save_pnm(&out_dir.join(format!("{}_cam.pgm", sample.id)), &up)?;
        sidecar.push_str(&format!(
            "{}\t{}\t{:.9}\t{:.9}\t{:.9}\n",
            sample.id,
            pred,
            logit,
            cam_mean,
            logit - bias,
        ));
    }
    let tmp = out_dir.join("cam_records.tsv.tmp");
    fs::write(&tmp, sidecar)?;
    fs::rename(&tmp, out_dir.join("cam_records.tsv"))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub label: String,
    pub dir: PathBuf,
    pub summary: Summary,
}

/// Run one experiment per value of the varied key.
///
/// `lambda1` couples `lambda2 = 1 - lambda1`; `ablation` understands
/// `cekd`, `only_cd`, `only_ce` and `single`.
pub fn sweep(
    base: &ExperimentConfig,
    key: &str,
    values: &[String],
    out_root: &Path,
) -> Result<Vec<SweepOutcome>> {
    if values.is_empty() {
        return Err(CekdError::Config("sweep needs at least one value".into()));
    }
    let mut outcomes = Vec::new();
    for value in values {
        let mut config = base.clone();
        match key {
            "lambda1" => {
                let l1: f64 = value
                    .parse()
                    .map_err(|_| CekdError::Config(format!("bad lambda1 value {value:?}")))?;
                if !(0.0..=1.0).contains(&l1) {
                    return Err(CekdError::Config("lambda1 must be in [0,1]".into()));
                }
                config.lambdas[0] = l1;
                config.lambdas[1] = 1.0 - l1;
            }
            "ablation" => match value.as_str() {
                "cekd" => {}
                "only_cd" => {
                    config.lambdas[2] = 0.0;
                    config.lambdas[3] = 0.0;
                    config.lambdas[4] = 0.0;
                    config.lambdas[5] = 0.0;
                }
                "only_ce" => {
                    config.lambdas[0] = 0.0;
                    config.lambdas[1] = 0.0;
                }
                "single" => config.train_mode = TrainMode::SingleTeacher,
                other => {
                    return Err(CekdError::Config(format!("unknown ablation {other:?}")));
                }
            },
            other => return Err(CekdError::Config(format!("cannot sweep key {other:?}"))),
        }
        let label = format!("{key}={value}");
        let dir = out_root.join(&label);
        let summary = run_experiment(&config, &dir)?;
        outcomes.push(SweepOutcome { label, dir, summary });
    }
    Ok(outcomes)
}
