use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{make_batches, prepare_scene, prepare_scenes, Batch, PreparedScene, TrainConfig, TrainError};
use crate::data::{Dataset, HoiCategory, SceneFixture, Vocabulary};
use crate::eval::{gt_triplets, match_predictions, mean_ap, triplets_from_predictions, ApReport};
use crate::features::EmbeddingTable;
use crate::graphnet::{forward_graph, save_checkpoint, DropoutCtx, ModelConfig, ModelParams};
use crate::numerics::{adam_step, bce_loss, sigmoid, AdamConfig, AdamState, Tensor};

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.json";

/// Independent random streams of one run, all derived from its seed.
const STREAM_INIT: u64 = 0;
const STREAM_BATCHES: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Loss of one batch, `Σ bce / (N × n_actions)` over its pairs, plus the
/// parameter gradients when `with_grads` is set. With a dropout context
/// the forward passes run in training mode.
pub fn batch_loss(
    params: &ModelParams,
    scenes: &[PreparedScene],
    batch: &Batch,
    mut dropout: Option<(f64, &mut dyn RngCore)>,
    with_grads: bool,
) -> Result<(f64, Option<Vec<Tensor>>), TrainError> {
    let n_actions = params.config().n_actions;
    let norm = (batch.pair_count() * n_actions) as f64;
    let mut total = 0.0;
    let mut grads: Option<Vec<Tensor>> = None;
    for (s, rows) in &batch.parts {
        let scene = &scenes[*s];
        let ctx = dropout.as_mut().map(|(rate, rng)| DropoutCtx {
            rate: *rate,
            rng: &mut **rng,
        });
        let mut pass = forward_graph(params, &scene.graph, ctx)?;
        let loss = pass.loss(rows, scene.label_rows(rows), norm)?;
        total += pass.loss_value(loss);
        if with_grads {
            let g = pass.backward(loss)?.params;
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        a.add_scaled(b, 1.0);
                    }
                }
            }
        }
    }
    Ok((total, grads))
}

/// One pass over `batches`: forward in training mode, backward, Adam step
/// per batch. Returns the mean batch loss.
pub fn train_epoch(
    params: &mut ModelParams,
    scenes: &[PreparedScene],
    batches: &[Batch],
    adam: &mut AdamState,
    dropout_rate: f64,
    rng: &mut dyn RngCore,
    epoch: usize,
) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    for (b, batch) in batches.iter().enumerate() {
        let (loss, grads) = batch_loss(params, scenes, batch, Some((dropout_rate, &mut *rng)), true)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                batch: b,
                value: loss,
            });
        }
        let grads = grads.expect("gradients requested");
        adam_step(params.tensors_mut(), &grads, adam)?;
        sum += loss;
    }
    Ok(if batches.is_empty() {
        0.0
    } else {
        sum / batches.len() as f64
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    /// Mean BCE over every pair × action; NaN when no scene has pairs.
    pub loss: f64,
    pub report: ApReport,
}

/// Evaluation-mode loss and AP report. Scenes too small to score still
/// contribute their ground truth, as misses.
pub fn evaluate_scenes(
    params: &ModelParams,
    fixtures: &[SceneFixture],
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    train_counts: &BTreeMap<HoiCategory, usize>,
    iou_threshold: f64,
) -> Result<EvalOutcome, TrainError> {
    let human_objects = params.config().human_objects;
    let mut triplets = Vec::new();
    let mut gts = Vec::new();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for f in fixtures {
        gts.extend(gt_triplets(f));
        let Some(p) = prepare_scene(f, vocab, table, human_objects, iou_threshold)? else {
            continue;
        };
        let pass = forward_graph(params, &p.graph, None)?;
        if let Some(z) = pass.logits() {
            scores.extend(z.values().iter().map(|&v| sigmoid(v)));
            labels.extend_from_slice(p.labels.values());
        }
        triplets.extend(triplets_from_predictions(
            &f.image_id,
            &pass.predictions(&p.graph),
            vocab.actions(),
        ));
    }
    let loss = if scores.is_empty() {
        f64::NAN
    } else {
        bce_loss(&scores, &labels)?
    };
    let report = mean_ap(&match_predictions(&triplets, &gts, iou_threshold), train_counts);
    Ok(EvalOutcome { loss, report })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// `(val_loss, mAP full, rare, non-rare)` on validation epochs.
    pub val: Option<(f64, f64, f64, f64)>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub const HEADER: &'static str =
        "epoch,train_loss,val_loss,val_map_full,val_map_rare,val_map_nonrare,seconds";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let val = match r.val {
                Some((l, f, ra, n)) => format!("{l},{f},{ra},{n}"),
                None => ",,,".into(),
            };
            let _ = writeln!(s, "{},{},{},{:.3}", r.epoch, r.train_loss, val, r.seconds);
        }
        s
    }
}

pub struct FitOutcome {
    pub model_config: ModelConfig,
    pub resolved: TrainConfig,
    pub final_params: ModelParams,
    pub best_params: ModelParams,
    /// Epoch of the best validation mAP; `None` when no validation ran.
    pub best_epoch: Option<usize>,
    pub log: TrainLog,
}

fn io_err(path: &Path, e: std::io::Error) -> TrainError {
    TrainError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Full training run. `on_row` sees every log row as it is produced. When
/// `out` is set the resolved config, final and best checkpoints and the log
/// are written there.
pub fn fit(
    config: &TrainConfig,
    data: &Dataset,
    out: Option<&Path>,
    mut on_row: impl FnMut(&LogRow),
) -> Result<FitOutcome, TrainError> {
    config.validate()?;
    let visual_dim = data.visual_dim().ok_or(TrainError::NoLabeledPairs)?;
    let model_config = config.model_config(visual_dim, data.embeddings.dim(), data.vocab.n_actions())?;
    let mut resolved = config.clone();
    resolved.visual_dim = Some(model_config.visual_dim);
    resolved.word_dim = Some(model_config.word_dim);
    resolved.n_actions = Some(model_config.n_actions);

    let mut params = ModelParams::init(&model_config, &mut stream(config.seed, STREAM_INIT));
    let mut batch_rng = stream(config.seed, STREAM_BATCHES);
    let mut dropout_rng = stream(config.seed, STREAM_DROPOUT);
    let scenes = prepare_scenes(
        &data.train,
        &data.vocab,
        &data.embeddings,
        model_config.human_objects,
        config.iou_threshold,
    )?;
    let train_counts = data.manifest.train_counts();
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), params.tensors());
    let mut best = params.clone();
    let mut best_map = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut log = TrainLog::default();
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        let batches = make_batches(&scenes, config.batch_size, &mut batch_rng)?;
        let train_loss = train_epoch(
            &mut params,
            &scenes,
            &batches,
            &mut adam,
            config.dropout,
            &mut dropout_rng,
            epoch,
        )?;
        let mut val = None;
        if !data.val.is_empty() && (epoch % config.eval_every == 0 || epoch == config.epochs) {
            let e = evaluate_scenes(
                &params,
                &data.val,
                &data.vocab,
                &data.embeddings,
                &train_counts,
                config.iou_threshold,
            )?;
            let r = &e.report;
            if r.map_full > best_map {
                best_map = r.map_full;
                best = params.clone();
                best_epoch = Some(epoch);
            }
            val = Some((e.loss, r.map_full, r.map_rare, r.map_nonrare));
        }
        let row = LogRow {
            epoch,
            train_loss,
            val,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_row(&row);
        log.rows.push(row);
    }
    if best_epoch.is_none() {
        best = params.clone();
    }

    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let cfg_path = dir.join(CONFIG_FILE);
        std::fs::write(&cfg_path, resolved.to_json()).map_err(|e| io_err(&cfg_path, e))?;
        save_checkpoint(&params, &dir.join(FINAL_CHECKPOINT))?;
        save_checkpoint(&best, &dir.join(BEST_CHECKPOINT))?;
        let log_path = dir.join(LOG_FILE);
        std::fs::write(&log_path, log.to_csv()).map_err(|e| io_err(&log_path, e))?;
    }
    Ok(FitOutcome {
        model_config,
        resolved,
        final_params: params,
        best_params: best,
        best_epoch,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate_synthetic, SyntheticParams};
    use crate::graphnet::Variant;

    fn tiny_data(dir: &Path, n: usize) -> Dataset {
        let p = SyntheticParams {
            n_scenes: n,
            n_object_classes: 4,
            n_actions: 4,
            visual_dim: 6,
            embedding_dim: 6,
            ..SyntheticParams::default()
        };
        generate_synthetic(11, &p, dir).unwrap();
        Dataset::open(dir).unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            hidden: 8,
            readout_hidden: 8,
            batch_size: 8,
            epochs: 2,
            eval_every: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_zero_dropout_is_a_fixed_point() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_data(dir.path(), 6);
        let cfg = tiny_cfg().model_config(6, 6, 4).unwrap();
        let mut params = ModelParams::init(&cfg, &mut stream(0, 0));
        let before = params.clone();
        let scenes = prepare_scenes(&data.train, &data.vocab, &data.embeddings, false, 0.5).unwrap();
        let batches = make_batches(&scenes, 8, &mut stream(0, 1)).unwrap();
        let mut adam = AdamState::new(AdamConfig::with_lr(0.0), params.tensors());
        let loss = train_epoch(&mut params, &scenes, &batches, &mut adam, 0.0, &mut stream(0, 2), 1).unwrap();
        assert_eq!(params, before);
        let eval: f64 = batches
            .iter()
            .map(|b| batch_loss(&params, &scenes, b, None, false).unwrap().0)
            .sum::<f64>()
            / batches.len() as f64;
        assert_eq!(loss.to_bits(), eval.to_bits());
    }

    #[test]
    fn one_step_lowers_a_single_pair_loss() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_data(dir.path(), 4);
        let cfg = tiny_cfg().model_config(6, 6, 4).unwrap();
        let mut params = ModelParams::init(&cfg, &mut stream(3, 0));
        let scenes = prepare_scenes(&data.train, &data.vocab, &data.embeddings, false, 0.5).unwrap();
        let s = scenes.iter().position(|s| !s.pairs.is_empty()).unwrap();
        let batch = vec![Batch { parts: vec![(s, vec![0])] }];
        let before = batch_loss(&params, &scenes, &batch[0], None, false).unwrap().0;
        let mut adam = AdamState::new(AdamConfig::with_lr(1e-3), params.tensors());
        train_epoch(&mut params, &scenes, &batch, &mut adam, 0.0, &mut stream(3, 2), 1).unwrap();
        let after = batch_loss(&params, &scenes, &batch[0], None, false).unwrap().0;
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn fit_writes_outputs_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_data(&dir.path().join("data"), 10);
        let a = fit(&tiny_cfg(), &data, Some(&dir.path().join("a")), |_| {}).unwrap();
        let b = fit(&tiny_cfg(), &data, Some(&dir.path().join("b")), |_| {}).unwrap();
        for f in [FINAL_CHECKPOINT, BEST_CHECKPOINT, CONFIG_FILE] {
            let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
            let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
            assert_eq!(x, y, "{f} differs");
        }
        let strip = |l: &TrainLog| l.rows.iter().map(|r| (r.epoch, r.train_loss.to_bits(), format!("{:?}", r.val))).collect::<Vec<_>>();
        assert_eq!(strip(&a.log), strip(&b.log));
        let csv = std::fs::read_to_string(dir.path().join("a").join(LOG_FILE)).unwrap();
        assert_eq!(csv.lines().next().unwrap(), TrainLog::HEADER);
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn semantic_only_checkpoint_has_no_visual_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_data(&dir.path().join("data"), 6);
        let cfg = TrainConfig {
            variant: Variant::SemanticOnly,
            epochs: 1,
            ..tiny_cfg()
        };
        let out = fit(&cfg, &data, Some(&dir.path().join("run")), |_| {}).unwrap();
        assert!(out.final_params.names().iter().all(|n| !n.starts_with("visual")));
        let text = std::fs::read(dir.path().join("run").join(FINAL_CHECKPOINT)).unwrap();
        let header = String::from_utf8_lossy(&text[..200]);
        assert!(header.contains("variant 02"));
    }
}
