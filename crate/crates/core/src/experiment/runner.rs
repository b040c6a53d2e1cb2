//! Experiment execution: data pipeline, training loop, evaluation.
//!
//! All randomness flows from the config seed through four derived streams —
//! data, init, train, eval — consumed in a fixed order, so a (config, seed)
//! pair fully determines the run. The centralized topology builds the same
//! per-domain segments as the split topologies and trains them fused, which
//! is why its final parameter hash matches a split run of the same config.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::data::{
    align_samples, load_fraud_csv, load_retail_csv, make_batches, negative_sample,
    random_undersample, smote_oversample, standardize_columns, train_test_split, DomainPartition,
    InteractionTable, SampleTable, FRAUD_COLUMNS,
};
use crate::error::{Error, Result};
use crate::experiment::config::{
    build_label_head, build_segment, stack_output_width, ExperimentConfig, SyntheticMode, UseCase,
};
use crate::experiment::report::{hex_string, RunReport, TranscriptSummary};
use crate::experiment::synthetic::{generate_synthetic_fraud, generate_synthetic_retail};
use crate::metrics::{
    auc_roc, hit_ratio_at_k, ndcg_at_k, precision_recall_f1, rank_items, recall_at_k,
    ClassificationOutcome, MetricsReport, RankedList,
};
use crate::nn::{init_params, sigmoid, NetworkSegment, OptimizerConfig, SegmentRole};
use crate::protocol::{
    run_round_centralized, run_round_label_sharing, run_round_u_shaped, MessageKind, TopologyKind,
    Transcript,
};
use crate::rng::RngState;
use crate::tensor::{concat_columns, Tensor};

mod streams {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const EVAL: u64 = 4;
}

/// The segments of one experiment, in role order.
struct Mesh {
    domains: Vec<NetworkSegment>,
    server: NetworkSegment,
    head: Option<NetworkSegment>,
}

impl Mesh {
    /// Builds and initializes every segment. RNG consumption order: domains
    /// ascending, then the server, then the label head.
    fn build(
        cfg: &ExperimentConfig,
        domain_widths: &[usize],
        domain_vocabs: Option<&[usize]>,
        rng: &mut RngState,
    ) -> Result<Self> {
        let model = cfg.resolved_model();
        let mut domains = Vec::with_capacity(domain_widths.len());
        let mut total_cut = 0usize;
        for (d, &width) in domain_widths.iter().enumerate() {
            let vocab = domain_vocabs.map(|v| v[d]);
            let mut seg = build_segment(SegmentRole::Domain, &model.domain, width, vocab)?;
            init_params(&mut seg, rng)?;
            total_cut += stack_output_width(&model.domain, width)?;
            domains.push(seg);
        }
        let mut server = build_segment(SegmentRole::Server, &model.server, total_cut, None)?;
        init_params(&mut server, rng)?;
        let head = if cfg.topology == TopologyKind::SplitUShaped {
            let server_out = stack_output_width(&model.server, total_cut)?;
            Some(build_label_head(&model.label_head, server_out, rng)?)
        } else {
            None
        };
        Ok(Self {
            domains,
            server,
            head,
        })
    }

    /// Probability scores for a row-aligned set of domain inputs.
    fn predict(&self, domain_inputs: &[Tensor]) -> Result<Tensor> {
        let parts = self
            .domains
            .iter()
            .zip(domain_inputs)
            .map(|(seg, x)| seg.infer(x))
            .collect::<Result<Vec<_>>>()?;
        let mut out = self.server.infer(&concat_columns(&parts)?)?;
        if let Some(head) = &self.head {
            out = head.infer(&out)?;
        }
        out.map(sigmoid)
    }

    /// SHA-256 over every segment's parameters, domains first.
    fn param_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for seg in &self.domains {
            hasher.update(seg.params_to_blob());
        }
        hasher.update(self.server.params_to_blob());
        if let Some(head) = &self.head {
            hasher.update(head.params_to_blob());
        }
        hex_string(&hasher.finalize())
    }

    fn train_step(
        &mut self,
        topology: TopologyKind,
        round: u32,
        inputs: &[Tensor],
        labels: &Tensor,
        opt: &OptimizerConfig,
    ) -> Result<(f64, Option<Transcript>)> {
        match topology {
            TopologyKind::Centralized => {
                let loss = run_round_centralized(
                    &mut self.domains,
                    &mut self.server,
                    self.head.as_mut(),
                    inputs,
                    labels,
                    opt,
                )?;
                Ok((loss, None))
            }
            TopologyKind::SplitLabelSharing => {
                let (loss, t) = run_round_label_sharing(
                    round,
                    &mut self.domains,
                    &mut self.server,
                    inputs,
                    labels,
                    opt,
                )?;
                Ok((loss, Some(t)))
            }
            TopologyKind::SplitUShaped => {
                let head = self
                    .head
                    .as_mut()
                    .ok_or_else(|| Error::Config("U-shaped run without a label head".into()))?;
                let (loss, t) = run_round_u_shaped(
                    round,
                    &mut self.domains,
                    &mut self.server,
                    head,
                    inputs,
                    labels,
                    opt,
                )?;
                Ok((loss, Some(t)))
            }
        }
    }
}

struct TrainLog {
    per_epoch_loss: Vec<f64>,
    summary: TranscriptSummary,
}

fn absorb_transcript(
    summary: &mut TranscriptSummary,
    transcript: Option<Transcript>,
    sink: &mut Option<&mut dyn Write>,
) -> Result<()> {
    if let Some(t) = transcript {
        summary.cut_messages += t.count_kind(MessageKind::Cut) as u64;
        summary.grad_messages += t.count_kind(MessageKind::Grad) as u64;
        summary.logits_messages += t.count_kind(MessageKind::Logits) as u64;
        summary.loss_grad_messages += t.count_kind(MessageKind::LossGrad) as u64;
        if let Some(out) = sink {
            out.write_all(t.to_jsonl().as_bytes())?;
        }
    }
    Ok(())
}

/// Runs one experiment end to end.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    run_experiment_with_transcript(cfg, None::<&Path>)
}

/// Like [`run_experiment`], additionally streaming every cross-boundary
/// message's metadata to a JSON-lines file.
pub fn run_experiment_with_transcript(
    cfg: &ExperimentConfig,
    transcript_path: Option<impl AsRef<Path>>,
) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let mut file;
    let mut sink: Option<&mut dyn Write> = match transcript_path {
        Some(p) => {
            file = std::fs::File::create(p.as_ref())?;
            Some(&mut file)
        }
        None => None,
    };

    let retail_style = matches!(cfg.use_case, UseCase::Retail)
        || (cfg.use_case == UseCase::Synthetic && cfg.synthetic.mode == SyntheticMode::Retail);
    let (mesh, log, metrics) = if retail_style {
        run_retail_style(cfg, &mut sink)?
    } else {
        run_fraud_style(cfg, &mut sink)?
    };

    Ok(RunReport {
        config: cfg.clone(),
        train_loss: log.per_epoch_loss,
        metrics,
        transcript_summary: log.summary,
        param_hash: mesh.param_hash(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

fn resolve_partition(cfg: &ExperimentConfig, columns: &[String]) -> Result<DomainPartition> {
    if let Some(map) = &cfg.partition {
        return DomainPartition::new(map.clone(), cfg.num_domains);
    }
    let is_fraud_schema = columns.len() == FRAUD_COLUMNS.len()
        && columns.iter().zip(FRAUD_COLUMNS).all(|(a, b)| a == b);
    if is_fraud_schema && cfg.num_domains == 3 {
        return Ok(DomainPartition::fraud_default());
    }
    DomainPartition::contiguous(columns, cfg.num_domains)
}

fn run_fraud_style(
    cfg: &ExperimentConfig,
    sink: &mut Option<&mut dyn Write>,
) -> Result<(Mesh, TrainLog, MetricsReport)> {
    let root = RngState::new(cfg.seed);
    let mut data_rng = root.derive(streams::DATA);

    let table = match cfg.use_case {
        UseCase::Fraud => load_fraud_csv(cfg.data.fraud_csv.as_ref().expect("validated"))?,
        UseCase::Synthetic => generate_synthetic_fraud(
            cfg.synthetic.rows,
            cfg.synthetic.features,
            cfg.synthetic.imbalance,
            &mut data_rng,
        )?,
        UseCase::Retail => unreachable!("routed to the retail path"),
    };

    let (mut train, mut test) = train_test_split(&table, cfg.test_fraction, &mut data_rng, true)?;
    if cfg.use_case == UseCase::Fraud {
        // The two untransformed columns of the card schema, fitted on train.
        standardize_columns(&mut train, &mut [&mut test], &["Time", "Amount"])?;
    }
    if let Some(resample) = &cfg.resample {
        let (f, l) = smote_oversample(
            train.features(),
            train.labels().expect("fraud tables carry labels"),
            resample,
            &mut data_rng,
        )?;
        let (f, l) = random_undersample(&f, &l, resample, &mut data_rng)?;
        train = SampleTable::new(
            (0..f.rows() as u64).collect(),
            train.columns().to_vec(),
            f,
            Some(l),
        )?;
    }

    let partition = resolve_partition(cfg, train.columns())?;
    let train_domains = align_samples(&vertical_partition_checked(&train, &partition)?)?;
    let test_domains = align_samples(&vertical_partition_checked(&test, &partition)?)?;
    let widths: Vec<usize> = train_domains.iter().map(|t| t.features().cols()).collect();

    let mut init_rng = root.derive(streams::INIT);
    let mut mesh = Mesh::build(cfg, &widths, None, &mut init_rng)?;

    let opt = OptimizerConfig::new(cfg.learning_rate)?;
    let mut train_rng = root.derive(streams::TRAIN);
    let train_labels = train.labels().expect("validated").clone();
    let mut log = TrainLog {
        per_epoch_loss: Vec::with_capacity(cfg.epochs),
        summary: TranscriptSummary::default(),
    };
    let mut round: u32 = 0;
    for epoch in 0..cfg.epochs {
        let batches = make_batches(
            &train_domains,
            &train_labels,
            cfg.batch_size,
            &mut train_rng,
            cfg.shuffle,
        )?;
        let mut epoch_loss = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let (loss, transcript) = mesh
                .train_step(cfg.topology, round, &batch.domain_inputs, &batch.labels, &opt)
                .map_err(|e| diverged(e, epoch, bi))?;
            absorb_transcript(&mut log.summary, transcript, sink)?;
            epoch_loss += loss;
            round += 1;
            log.summary.rounds += 1;
        }
        log.per_epoch_loss.push(epoch_loss / batches.len() as f64);
    }

    let test_inputs: Vec<Tensor> = test_domains
        .iter()
        .map(|t| t.features().clone())
        .collect();
    let scores = mesh.predict(&test_inputs)?;
    let outcome =
        ClassificationOutcome::new(scores, test.labels().expect("validated").clone(), 0.5)?;
    let report = precision_recall_f1(&outcome)?;
    let auc = auc_roc(&outcome)?;
    Ok((
        mesh,
        log,
        MetricsReport::with_classification(&report, auc),
    ))
}

fn vertical_partition_checked(
    table: &SampleTable,
    partition: &DomainPartition,
) -> Result<Vec<SampleTable>> {
    crate::data::vertical_partition(table, partition)
}

fn diverged(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::NonFinite(msg) => Error::NonFinite(format!(
            "training diverged at epoch {epoch}, batch {batch}: {msg}"
        )),
        other => other,
    }
}

/// Per-interaction gathered features for the retail domains: row `r` of the
/// result is the side-table feature row of entity `entities[r]`.
fn gather_rows(features: &Tensor, entities: &[u32]) -> Result<Tensor> {
    let rows: Vec<usize> = entities.iter().map(|&e| e as usize).collect();
    features.take_rows(&rows)
}

fn run_retail_style(
    cfg: &ExperimentConfig,
    sink: &mut Option<&mut dyn Write>,
) -> Result<(Mesh, TrainLog, MetricsReport)> {
    let root = RngState::new(cfg.seed);
    let mut data_rng = root.derive(streams::DATA);

    // Domain 0 owns the customer features, domain 1 the article features.
    let (interactions, domain_tables, vocabs) = match cfg.use_case {
        UseCase::Retail => {
            let mut data = load_retail_csv(
                cfg.data.transactions_csv.as_ref().expect("validated"),
                cfg.data.articles_csv.as_ref().expect("validated"),
                cfg.data.customers_csv.as_ref().expect("validated"),
            )?;
            if let Some(ratio) = cfg.data.user_sample_ratio {
                data = crate::data::subsample_retail_by_user(&data, ratio, &mut data_rng)?;
            }
            let data = crate::data::restrict_to_active_users(&data)?;
            (
                data.interactions,
                data.domain_tables,
                data.domain_vocab_sizes,
            )
        }
        UseCase::Synthetic => {
            let s = &cfg.synthetic;
            let interactions = generate_synthetic_retail(
                s.users,
                s.items,
                s.rank,
                s.positives_per_user,
                &mut data_rng,
            )?;
            let id_table = |n: usize, name: &str| {
                SampleTable::new(
                    (0..n as u64).collect(),
                    vec![name.to_string()],
                    Tensor::new(vec![n, 1], (0..n).map(|i| i as f64).collect())
                        .expect("id column"),
                    None,
                )
                .expect("id table")
            };
            (
                interactions,
                vec![
                    id_table(s.users, "customer_id"),
                    id_table(s.items, "article_id"),
                ],
                vec![s.users, s.items],
            )
        }
        UseCase::Fraud => unreachable!("routed to the fraud path"),
    };
    if cfg.num_domains != 2 {
        return Err(Error::Config(format!(
            "the retail use case has exactly two feature domains (customers, articles), \
             got num_domains = {}",
            cfg.num_domains
        )));
    }

    // Leave-one-out: one held-out positive per user with at least two.
    let positives = interactions.positives_by_user();
    let mut held_out: Vec<Option<u32>> = vec![None; interactions.num_users()];
    for (u, set) in positives.iter().enumerate() {
        if set.len() >= 2 {
            let items: Vec<u32> = set.iter().copied().collect();
            held_out[u] = Some(items[data_rng.next_below(items.len() as u64) as usize]);
        }
    }
    let train_rows: Vec<(u32, u32, u8)> = interactions
        .rows()
        .iter()
        .copied()
        .filter(|&(u, i, _)| held_out[u as usize] != Some(i))
        .collect();
    let train_positives = InteractionTable::new(
        train_rows,
        interactions.num_users(),
        interactions.num_items(),
    )?;

    let neg_ratio = cfg.resample.map(|r| r.neg_ratio).unwrap_or(5);
    let train_set = negative_sample(&train_positives, neg_ratio, &mut data_rng)?;

    let widths: Vec<usize> = domain_tables.iter().map(|t| t.features().cols()).collect();
    let mut init_rng = root.derive(streams::INIT);
    let mut mesh = Mesh::build(cfg, &widths, Some(&vocabs), &mut init_rng)?;

    let opt = OptimizerConfig::new(cfg.learning_rate)?;
    let mut train_rng = root.derive(streams::TRAIN);
    let n = train_set.len();
    let mut log = TrainLog {
        per_epoch_loss: Vec::with_capacity(cfg.epochs),
        summary: TranscriptSummary::default(),
    };
    let mut round: u32 = 0;
    for epoch in 0..cfg.epochs {
        let perm = if cfg.shuffle {
            train_rng.permutation(n)
        } else {
            (0..n).collect()
        };
        let mut epoch_loss = 0.0;
        let mut batch_count = 0usize;
        for (bi, chunk) in perm.chunks(cfg.batch_size).enumerate() {
            let users: Vec<u32> = chunk.iter().map(|&r| train_set.rows()[r].0).collect();
            let items: Vec<u32> = chunk.iter().map(|&r| train_set.rows()[r].1).collect();
            let labels = Tensor::new(
                vec![chunk.len(), 1],
                chunk
                    .iter()
                    .map(|&r| f64::from(train_set.rows()[r].2))
                    .collect(),
            )?;
            let inputs = vec![
                gather_rows(domain_tables[0].features(), &users)?,
                gather_rows(domain_tables[1].features(), &items)?,
            ];
            let (loss, transcript) = mesh
                .train_step(cfg.topology, round, &inputs, &labels, &opt)
                .map_err(|e| diverged(e, epoch, bi))?;
            absorb_transcript(&mut log.summary, transcript, sink)?;
            epoch_loss += loss;
            round += 1;
            log.summary.rounds += 1;
            batch_count += 1;
        }
        log.per_epoch_loss.push(epoch_loss / batch_count as f64);
    }

    // Ranking evaluation: for every user with a held-out item, rank items
    // the user did not interact with in training (the held-out item among
    // them) and score the list at K. The candidate pool is the whole
    // remaining catalog, or `eval_negatives` sampled items plus the target.
    let mut eval_rng = root.derive(streams::EVAL);
    let train_pos = train_positives.positives_by_user();
    let mut lists: Vec<RankedList> = Vec::new();
    for u in 0..interactions.num_users() {
        let Some(target) = held_out[u] else { continue };
        let all_candidates: Vec<u32> = (0..interactions.num_items() as u32)
            .filter(|i| !train_pos[u].contains(i))
            .collect();
        let candidates: Vec<u32> = match cfg.eval_negatives {
            Some(n) => {
                let pool: Vec<u32> = all_candidates
                    .iter()
                    .copied()
                    .filter(|&i| i != target)
                    .collect();
                let take = n.min(pool.len());
                let mut picked: Vec<u32> = eval_rng
                    .sample_indices(pool.len(), take)
                    .into_iter()
                    .map(|p| pool[p])
                    .collect();
                picked.push(target);
                picked.sort_unstable();
                picked
            }
            None => all_candidates,
        };
        let users_col: Vec<u32> = vec![u as u32; candidates.len()];
        let inputs = vec![
            gather_rows(domain_tables[0].features(), &users_col)?,
            gather_rows(domain_tables[1].features(), &candidates)?,
        ];
        let scores = mesh.predict(&inputs)?;
        let scored: Vec<(u32, f64)> = candidates
            .iter()
            .copied()
            .zip(scores.data().iter().copied())
            .collect();
        lists.push(rank_items(
            u as u64,
            &scored,
            BTreeSet::from([target]),
            cfg.metrics_k,
        )?);
    }
    if lists.is_empty() {
        return Err(Error::Data(
            "no user has enough positives for a held-out evaluation".into(),
        ));
    }
    let metrics = MetricsReport::with_ranking(
        cfg.metrics_k,
        hit_ratio_at_k(&lists)?,
        ndcg_at_k(&lists)?,
        recall_at_k(&lists)?,
    );
    Ok((mesh, log, metrics))
}

/// Runs the domain-diversity sweep: one experiment per domain count with the
/// same seed and feature set, repartitioned contiguously. Reports come back
/// ordered by ascending domain count.
pub fn run_diversity_sweep(
    cfg: &ExperimentConfig,
    domain_counts: &[usize],
) -> Result<Vec<RunReport>> {
    if domain_counts.is_empty() {
        return Err(Error::Config("sweep needs at least one domain count".into()));
    }
    let mut counts = domain_counts.to_vec();
    counts.sort_unstable();
    counts.dedup();
    let mut reports = Vec::with_capacity(counts.len());
    for &d in &counts {
        let mut sweep_cfg = cfg.clone();
        sweep_cfg.num_domains = d;
        sweep_cfg.partition = None;
        sweep_cfg.validate()?;
        reports.push(run_experiment(&sweep_cfg)?);
    }
    Ok(reports)
}
