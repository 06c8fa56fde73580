//! Command-line entry point wiring config, credentials, and file paths
//! across the pipeline modules.

use crate::config::{PipelineConfig, RunManifest};
use crate::datagen::{self, Exemplar, ScenarioMatrix};
use crate::decode::client::{CompletionClient, OpenAiClient, ScriptedStub};
use crate::decode::{SamplingPolicy, TempMode};
use crate::decontam::{self, BenchmarkSet, CorpusSample};
use crate::embed::{EmbeddingProvider, SidecarEmbeddings};
use crate::eval::{self, EvalRun, RunMetrics};
use crate::orpo;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "dcot", version, about = "Tag-structured CoT data and evaluation pipeline")]
pub struct Cli {
    /// Pipeline config file (TOML); flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to runs/<timestamp>-<config hash>.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default scenario/template/rejection matrix file.
    GenMatrix {
        #[arg(long, default_value = "matrix.toml")]
        out: PathBuf,
    },
    /// Sample matrix combinations and generate preference pairs from the teacher.
    Generate {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value_t = 5181)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON file with few-shot exemplars; built-in exemplars when absent.
        #[arg(long)]
        exemplars: Option<PathBuf>,
        /// Scripted stub endpoint instead of the configured teacher.
        #[arg(long)]
        stub: Option<PathBuf>,
        #[arg(long, default_value = "pairs.jsonl")]
        out: PathBuf,
    },
    /// Dual-criterion contamination filter against benchmark test sets.
    Decontam {
        #[arg(long)]
        samples: PathBuf,
        /// Benchmark item file(s), NAME=PATH.
        #[arg(long = "benchmark", required = true)]
        benchmarks: Vec<String>,
        /// Sidecar embeddings for the samples file.
        #[arg(long)]
        sample_embeddings: PathBuf,
        /// Sidecar embeddings per benchmark, NAME=PATH.
        #[arg(long = "benchmark-embeddings", required = true)]
        benchmark_embeddings: Vec<String>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Pack validated pairs into chosen/rejected training records.
    Pack {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value = "packed.jsonl")]
        out: PathBuf,
    },
    /// Gradient self-check of the preference loss; emits the training manifest.
    OrpoCheck {
        #[arg(long, default_value_t = 100)]
        instances: u64,
    },
    /// Run a multiple-choice benchmark through the decode orchestrator.
    Eval {
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<TempMode>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, default_value = "default")]
        condition: String,
        /// Scripted stub endpoint instead of the configured target.
        #[arg(long)]
        stub: Option<PathBuf>,
        /// Max output tokens per item.
        #[arg(long)]
        budget: Option<u64>,
        /// File containing the system prompt variant.
        #[arg(long)]
        system_prompt_file: Option<PathBuf>,
    },
    /// Compute the accuracy/token Pareto front from metric CSVs.
    Report {
        #[arg(long = "metrics", required = true)]
        metrics: Vec<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<TempMode, String> {
    match s.to_ascii_lowercase().as_str() {
        "locked" => Ok(TempMode::Locked),
        "dynamic" => Ok(TempMode::Dynamic),
        other => Err(format!("unknown mode '{other}' (expected locked|dynamic)")),
    }
}

fn parse_named(specs: &[String], what: &str) -> Result<Vec<(String, PathBuf)>> {
    specs
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(name, path)| (name.to_string(), PathBuf::from(path)))
                .with_context(|| format!("{what} must be NAME=PATH, got '{s}'"))
        })
        .collect()
}

pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let command_name = command_name(&cli.command);
    let out_dir = match &cli.out_dir {
        Some(d) => d.clone(),
        None => PathBuf::from(format!(
            "runs/{}-{}",
            chrono::Utc::now().format("%Y%m%dT%H%M%S"),
            config.hash()
        )),
    };
    std::fs::create_dir_all(&out_dir)?;
    RunManifest::new(&config, command_name).write(&out_dir)?;

    match cli.command {
        Command::GenMatrix { out } => {
            let matrix = ScenarioMatrix::default_matrix();
            matrix.write(&out_dir.join(&out))?;
            let combos = datagen::enumerate_matrix(&matrix)?;
            println!(
                "wrote matrix: {} scenarios x {} templates x {} categories = {} combinations",
                matrix.scenarios.len(),
                matrix.templates.len(),
                matrix.rejection_categories.len(),
                combos.len()
            );
        }
        Command::Generate {
            matrix,
            count,
            seed,
            exemplars,
            stub,
            out,
        } => {
            let matrix = ScenarioMatrix::read(&matrix)?;
            let combos = datagen::enumerate_matrix(&matrix)?;
            let sampled = datagen::sample_combinations(&combos, count, seed)?;
            let exemplars = match exemplars {
                Some(path) => {
                    serde_json::from_str::<Vec<Exemplar>>(&std::fs::read_to_string(path)?)?
                }
                None => default_exemplars(),
            };
            let client = make_client(stub.as_deref(), &config, true)?;
            let opts = datagen::GenerationOptions {
                teacher_model_id: config.teacher.model.clone(),
                concurrency: config.concurrency,
                ..Default::default()
            };
            let report = datagen::generate_pairs(&sampled, client.as_ref(), &exemplars, &opts);
            datagen::write_pairs_jsonl(&report.pairs, &out_dir.join(&out))?;
            for (combo, reason) in &report.dropped {
                eprintln!("dropped {}/{}: {reason}", combo.scenario.name, combo.category.name);
            }
            println!(
                "generated {} pairs ({} dropped) -> {}",
                report.pairs.len(),
                report.dropped.len(),
                out_dir.join(&out).display()
            );
        }
        Command::Decontam {
            samples,
            benchmarks,
            sample_embeddings,
            benchmark_embeddings,
            threshold,
        } => {
            let threshold = threshold.unwrap_or(config.cosine_threshold);
            cmd_decontam(
                &samples,
                &parse_named(&benchmarks, "--benchmark")?,
                &sample_embeddings,
                &parse_named(&benchmark_embeddings, "--benchmark-embeddings")?,
                threshold,
                config.ngram_n,
                &out_dir,
            )?;
        }
        Command::Pack { pairs, out } => {
            let pairs = datagen::read_pairs_jsonl(&pairs)?;
            let mut text = String::new();
            for pair in &pairs {
                let rec = datagen::pack(pair);
                text.push_str(&serde_json::to_string(&rec)?);
                text.push('\n');
            }
            std::fs::write(out_dir.join(&out), text)?;
            println!("packed {} records -> {}", pairs.len(), out_dir.join(&out).display());
        }
        Command::OrpoCheck { instances } => {
            let worst = gradient_self_check(instances)?;
            let manifest = orpo::TrainingManifest::default();
            manifest.write(&out_dir.join("training_manifest.toml"))?;
            println!(
                "gradient check passed: {instances} instances, max relative error {worst:.3e}"
            );
            println!("training manifest -> {}", out_dir.join("training_manifest.toml").display());
        }
        Command::Eval {
            benchmark,
            mode,
            seeds,
            condition,
            stub,
            budget,
            system_prompt_file,
        } => {
            let items = eval::load_benchmark_jsonl(&benchmark)?;
            let mut policy: SamplingPolicy = config.sampling.clone();
            if let Some(mode) = mode {
                policy.mode = mode;
            }
            if let Some(budget) = budget {
                policy.max_output_tokens = budget;
            }
            let seed_list: Vec<u64> = match seeds {
                Some(n) => (0..n as u64).collect(),
                None => config.seeds.clone(),
            };
            let system_prompt = match system_prompt_file {
                Some(path) => Some(std::fs::read_to_string(path)?),
                None => None,
            };
            let run = EvalRun {
                condition_name: condition,
                policy,
                counter: config.token_counter,
                system_prompt,
                seeds: seed_list,
                concurrency: config.concurrency,
            };
            let client = make_client(stub.as_deref(), &config, false)?;
            let outcome = eval::run_eval(&items, &run, client.as_ref())?;
            for (seed, records) in &outcome.per_seed {
                eval::write_records_jsonl(records, &out_dir.join(format!("records_seed{seed}.jsonl")))?;
            }
            let mut rows = outcome.per_seed_metrics.clone();
            rows.push(outcome.aggregate.clone());
            eval::write_metrics_csv(&rows, &out_dir.join("metrics.csv"))?;
            let a = &outcome.aggregate;
            println!(
                "{}: accuracy {:.2}% null {:.2}% corrected {:.2}% mean tokens {:.0} ({} items, {} seeds)",
                a.condition_name,
                a.accuracy * 100.0,
                a.null_rate * 100.0,
                a.null_corrected * 100.0,
                a.mean_tokens,
                a.n_items,
                a.n_seeds
            );
            println!("metrics -> {}", out_dir.join("metrics.csv").display());
        }
        Command::Report { metrics } => {
            let mut points = Vec::new();
            for path in &metrics {
                for m in read_metrics_csv(path)? {
                    points.push((m.condition_name, m.accuracy, m.mean_tokens));
                }
            }
            let front = eval::pareto_front(&points);
            eval::write_pareto_csv(&front, &out_dir.join("pareto.csv"))?;
            for p in front.iter().filter(|p| p.on_front) {
                println!("on front: {} ({:.4}, {:.1})", p.condition_name, p.accuracy, p.mean_tokens);
            }
            println!("pareto -> {}", out_dir.join("pareto.csv").display());
        }
    }
    Ok(())
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::GenMatrix { .. } => "gen-matrix",
        Command::Generate { .. } => "generate",
        Command::Decontam { .. } => "decontam",
        Command::Pack { .. } => "pack",
        Command::OrpoCheck { .. } => "orpo-check",
        Command::Eval { .. } => "eval",
        Command::Report { .. } => "report",
    }
}

fn make_client(
    stub: Option<&Path>,
    config: &PipelineConfig,
    teacher: bool,
) -> Result<Box<dyn CompletionClient>> {
    match stub {
        Some(path) => Ok(Box::new(ScriptedStub::from_file(path)?)),
        None => {
            let ep = if teacher { &config.teacher } else { &config.eval_target };
            Ok(Box::new(OpenAiClient::new(
                &ep.base_url,
                &ep.model,
                ep.api_key_env.as_deref(),
            )))
        }
    }
}

fn cmd_decontam(
    samples_path: &Path,
    benchmarks: &[(String, PathBuf)],
    sample_embeddings: &Path,
    benchmark_embeddings: &[(String, PathBuf)],
    threshold: f64,
    ngram_n: usize,
    out_dir: &Path,
) -> Result<()> {
    let raw_lines: Vec<String> = std::fs::read_to_string(samples_path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect();
    let side = SidecarEmbeddings::load(sample_embeddings)?;
    let mut samples = Vec::new();
    for (i, line) in raw_lines.iter().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line)?;
        let id = v["id"]
            .as_str()
            .map(str::to_string)
            .unwrap_or_else(|| format!("sample-{}", i + 1));
        // default comparison text: user_prompt + chosen_response
        let text = match (v["user_prompt"].as_str(), v["chosen_response"].as_str()) {
            (Some(u), Some(c)) => format!("{u}\n{c}"),
            _ => v["text"].as_str().unwrap_or("").to_string(),
        };
        let embedding = side.embed(&id, &text)?;
        samples.push(CorpusSample { id, text, embedding });
    }

    let mut sets = Vec::new();
    for (name, path) in benchmarks {
        let items: Vec<(String, String)> = eval::load_benchmark_jsonl(path)?
            .into_iter()
            .map(|it| {
                let text = format!("{}\n{}", it.question, it.options.join("\n"));
                (it.id, text)
            })
            .collect();
        let emb_path = benchmark_embeddings
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
            .with_context(|| format!("no --benchmark-embeddings entry for '{name}'"))?;
        let emb_side = SidecarEmbeddings::load(emb_path)?;
        let embeddings = items
            .iter()
            .map(|(id, text)| Ok((id.clone(), emb_side.embed(id, text)?)))
            .collect::<Result<Vec<_>>>()?;
        sets.push(BenchmarkSet {
            name: name.clone(),
            items,
            embeddings,
        });
    }

    let outcome = decontam::filter_corpus(&samples, &sets, threshold, ngram_n)?;

    // clean JSONL keeps surviving input lines verbatim
    let mut clean = String::new();
    for (sample, line) in samples.iter().zip(&raw_lines) {
        if outcome.clean_ids.contains(&sample.id) {
            clean.push_str(line);
            clean.push('\n');
        }
    }
    std::fs::write(out_dir.join("clean.jsonl"), clean)?;

    let mut w = csv::Writer::from_path(out_dir.join("verdicts.csv"))?;
    w.write_record(["sample_id", "removed", "max_cosine", "nearest_benchmark_id", "ngram_hit"])?;
    for v in &outcome.verdicts {
        w.write_record([
            v.sample_id.clone(),
            v.removed.to_string(),
            format!("{:.6}", v.max_cosine),
            v.nearest_benchmark_id.clone(),
            v.ngram_hit
                .as_ref()
                .map(|h| format!("{}:{}", h.benchmark_id, h.shingle))
                .unwrap_or_default(),
        ])?;
    }
    w.flush()?;

    for h in &outcome.histograms {
        let mut w = csv::Writer::from_path(out_dir.join(format!("histogram_{}.csv", h.benchmark_name)))?;
        w.write_record(["bin_lo", "bin_hi", "count"])?;
        for (i, count) in h.counts.iter().enumerate() {
            w.write_record([
                format!("{:.3}", h.bin_edges[i]),
                format!("{:.3}", h.bin_edges[i + 1]),
                count.to_string(),
            ])?;
        }
        w.flush()?;
        println!(
            "{}: {} scored, {} above threshold {threshold}",
            h.benchmark_name,
            h.total(),
            h.removed_count
        );
    }
    let removed = outcome.verdicts.iter().filter(|v| v.removed).count();
    println!(
        "{} in -> {} removed -> {} clean",
        samples.len(),
        removed,
        outcome.clean_ids.len()
    );
    Ok(())
}

fn read_metrics_csv(path: &Path) -> Result<Vec<RunMetrics>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        out.push(RunMetrics {
            condition_name: rec[0].to_string(),
            accuracy: rec[1].parse()?,
            null_rate: rec[2].parse()?,
            null_corrected: rec[3].parse()?,
            mean_tokens: rec[4].parse()?,
            n_items: rec[5].parse()?,
            n_seeds: rec[6].parse()?,
        });
    }
    Ok(out)
}

fn gradient_self_check(instances: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let lambda = [0.0, 0.1, 1.0][(i % 3) as usize];
        let gen_seq = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let len = rng.gen_range(1..=16);
            (0..len).map(|_| rng.gen_range(-5.0..-0.01)).collect()
        };
        let chosen = gen_seq(&mut rng);
        let rejected = gen_seq(&mut rng);
        let analytic = orpo::orpo_gradients(&chosen, &rejected, lambda)?;
        let loss = |c: &[f64], r: &[f64]| orpo::orpo_loss(c, r, lambda).unwrap().loss_total;
        let h = 1e-6;
        for (k, &g) in analytic.chosen.iter().enumerate() {
            let mut plus = chosen.clone();
            let mut minus = chosen.clone();
            plus[k] += h;
            minus[k] -= h;
            let fd = (loss(&plus, &rejected) - loss(&minus, &rejected)) / (2.0 * h);
            let rel = (g - fd).abs() / fd.abs().max(1e-12);
            worst = worst.max(rel);
        }
        for (k, &g) in analytic.rejected.iter().enumerate() {
            let mut plus = rejected.clone();
            let mut minus = rejected.clone();
            plus[k] += h;
            minus[k] -= h;
            let fd = (loss(&chosen, &plus) - loss(&chosen, &minus)) / (2.0 * h);
            let denom = fd.abs().max(1e-12);
            let rel = (g - fd).abs() / denom;
            if lambda > 0.0 {
                worst = worst.max(rel);
            } else if g != 0.0 || fd.abs() > 1e-9 {
                worst = worst.max(rel);
            }
        }
    }
    if worst > 1e-5 {
        bail!("gradient check failed: max relative error {worst:.3e} > 1e-5");
    }
    Ok(worst)
}

fn default_exemplars() -> Vec<Exemplar> {
    let mk = |u: &str, tc: &str, cr: &str, tr: &str, rr: &str, why: &str| Exemplar {
        user_prompt: u.into(),
        thought_chosen: tc.into(),
        chosen_response: cr.into(),
        thought_rejected: tr.into(),
        rejected_response: rr.into(),
        reasoning: why.into(),
    };
    vec![
        mk(
            "Our only AS/400 operator retired and the nightly batch job failed. We cannot restart the server during business hours and have zero budget.",
            "Plan: open with TEMP_LOW to list what is known about the job chain, TEMP_MID for the recovery procedure, TEMP_HIGH only for workarounds. Token plan: LOW -> MID -> HIGH.",
            "<TEMP_LOW> Known facts: the job failed at step 3, the server must stay up, no budget. <TEMP_MID> Re-run the failed step from the spool log and verify the output files. <TEMP_HIGH> If the log is gone, reconstruct inputs from yesterday's backup extracts.",
            "Skip fact gathering; propose a full system restart as the clean fix.",
            "The fastest fix is to restart the server tonight and re-run the whole batch from the top.",
            "Restarting violates the stated constraint that the server cannot be restarted.",
        ),
        mk(
            "A pallet of temperature-sensitive vaccine is stuck at a closed border crossing. The truck's reefer has 6 hours of fuel left.",
            "Plan: TEMP_LOW to pin the hard constraints (6 hours, cold chain), TEMP_HIGH to explore rerouting and fuel options, TEMP_MID to compute the viable window. Token plan: LOW -> HIGH -> MID.",
            "<TEMP_LOW> Constraints: 6 hours of reefer fuel, cold chain must not break. <TEMP_HIGH> Options: divert to the 24h crossing 80 km south, or source diesel locally. <TEMP_MID> At 90 km/h the detour costs 1.1 hours, leaving a 4.9 hour margin.",
            "Treat it as a paperwork problem and advise waiting for the border to reopen.",
            "Borders usually reopen within a day; have the driver wait and keep the paperwork ready.",
            "Waiting exhausts the reefer fuel and destroys the shipment.",
        ),
        mk(
            "We found an unknown admin account on the payroll server during month-end close. Finance refuses any downtime.",
            "Plan: TEMP_LOW to enumerate observable facts before any action, TEMP_MID for containment steps that avoid downtime, TEMP_HIGH for attacker-perspective checks. Token plan: LOW -> MID -> HIGH.",
            "<TEMP_LOW> Facts: one unrecognized admin account, creation time unknown, no downtime allowed. <TEMP_MID> Disable the account's sessions, rotate credentials, snapshot logs without stopping services. <TEMP_HIGH> Assume lateral movement: check for new scheduled tasks and outbound transfers.",
            "Declare it a false positive because month-end close is too important to interrupt.",
            "Unknown accounts are usually leftover service accounts; proceed with close and review next week.",
            "Dangerously minimizes an active-compromise indicator to avoid inconvenience.",
        ),
    ]
}
