use std::fs;
use std::path::{Path, PathBuf};

use iterquant::bundle::{IQWT_MAGIC};
use iterquant::pipeline::{histogram_export, histogram_export_quantized, run_lstm_pipeline, IterationRecord, PipelineConfig};
use iterquant::prune::{
    csr_bits_estimate, load_mask, magnitude_prune, save_mask, storage_report, StorageParams, StorageReport, IQMK_MAGIC,
};
use iterquant::quant::{load_quantized, save_quantized, AlphaDtype, IQQT_MAGIC};
use iterquant::selftest::{run_selftest, Hooks};
use iterquant::train::{train as train_lstm, TrainMode};
use iterquant::{load_model, quantize_tensor, save_model, Bundle, Error, QTensor, QuantConfig, Result};
use regex::Regex;
use serde_json::json;

use crate::manifest::RunManifest;
use crate::{IterateArgs, PruneArgs, QuantizeArgs, ReportArgs, TrainArgs};

fn compile_filter(pattern: &str) -> Result<Regex> {
    Regex::new(pattern).map_err(|e| Error::Validation(format!("filter {pattern:?}: {e}")))
}

fn file_name(tensor: &str) -> String {
    tensor.replace(['/', '\\'], "_")
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("JSON value serializes"));
}

fn sibling_manifest(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// Reads a pipeline config; relative corpus and checkpoint paths are taken
/// relative to the config file.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: PipelineConfig =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut cfg.corpus, &mut cfg.initial_checkpoint].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

pub fn quantize(a: &QuantizeArgs, json: bool) -> Result<u8> {
    let bundle: Bundle = load_model(&a.model)?;
    let filter = compile_filter(&a.filter)?;
    let mask = a.mask.as_ref().map(load_mask).transpose()?;
    let qcfg = QuantConfig::new(a.bits, a.tables, a.method);
    let config = json!({
        "model": a.model, "bits": a.bits, "tables": a.tables, "method": a.method,
        "mask": a.mask, "filter": a.filter, "alpha_dtype": a.alpha_dtype, "out": a.out,
        "tol": qcfg.tol, "max_iters": qcfg.max_iters,
    });
    let manifest = RunManifest::start(&a.out.join("manifest.json"), "quantize", config)?;
    let outcome = (|| -> Result<Vec<serde_json::Value>> {
        let mut rows = Vec::new();
        for (name, m) in bundle.iter().filter(|(n, _)| filter.is_match(n)) {
            let bits = mask.as_ref().and_then(|mk| mk.bits(name));
            let (q, report) = quantize_tensor(m, &qcfg, bits)?;
            let path = a.out.join(format!("{}.iqqt", file_name(name)));
            save_quantized(&q, a.alpha_dtype, &path)?;
            let norm = m.squared_norm();
            rows.push(json!({
                "tensor": name,
                "rows": m.rows(),
                "cols": m.cols(),
                "sse": report.total_sse(),
                "relative_sse": if norm > 0.0 { report.total_sse() / norm } else { 0.0 },
                "empty_segments": report.empty_segments(),
                "ridge_fallbacks": report.ridge_fallbacks(),
                "file": path,
            }));
        }
        if rows.is_empty() {
            return Err(Error::Validation(format!("filter {:?} selects no tensors", a.filter)));
        }
        Ok(rows)
    })();
    manifest.finish(&outcome)?;
    let rows = outcome?;
    let total: f64 = rows.iter().map(|r| r["sse"].as_f64().unwrap_or(0.0)).sum();
    if json {
        print_json(&json!({ "tensors": rows, "total_sse": total }));
    } else {
        println!("{:<28} {:>11} {:>16} {:>12} {:>6} {:>6}", "tensor", "shape", "sse", "rel_sse", "empty", "ridge");
        for r in &rows {
            println!(
                "{:<28} {:>11} {:>16.6} {:>12.6} {:>6} {:>6}",
                r["tensor"].as_str().unwrap_or(""),
                format!("{}x{}", r["rows"], r["cols"]),
                r["sse"].as_f64().unwrap_or(0.0),
                r["relative_sse"].as_f64().unwrap_or(0.0),
                r["empty_segments"].to_string(),
                r["ridge_fallbacks"].to_string()
            );
        }
        println!("total sse {total:.6}");
    }
    Ok(0)
}

pub fn prune(a: &PruneArgs, json: bool) -> Result<u8> {
    let bundle: Bundle = load_model(&a.model)?;
    let filter = compile_filter(&a.filter)?;
    let config = json!({
        "model": a.model, "rate": a.rate, "scope": a.scope, "filter": a.filter, "out_mask": a.out_mask,
    });
    let manifest = RunManifest::start(&sibling_manifest(&a.out_mask), "prune", config)?;
    if a.rate == 0.0 {
        eprintln!("warning: rate 0 prunes nothing; writing an identity mask");
    }
    let outcome = magnitude_prune(&bundle, a.rate, a.scope, |n| filter.is_match(n))
        .and_then(|mask| save_mask(&mask, &a.out_mask).map(|_| mask));
    manifest.finish(&outcome)?;
    let mask = outcome?;
    let rows: Vec<serde_json::Value> = mask
        .tensors()
        .iter()
        .map(|t| {
            json!({
                "tensor": t.name, "rows": t.rows, "cols": t.cols, "survivors": t.survivors(),
                "pruned": t.len() - t.survivors(),
                "rate": if t.is_empty() { 0.0 } else { 1.0 - t.survivors() as f64 / t.len() as f64 },
            })
        })
        .collect();
    if json {
        print_json(&json!({
            "tensors": rows,
            "requested_rate": a.rate,
            "achieved_rate": mask.achieved_rate(),
            "survivors": mask.total_survivors(),
            "weights": mask.total_weights(),
        }));
    } else {
        println!("{:<28} {:>11} {:>10} {:>10} {:>8}", "tensor", "shape", "survivors", "pruned", "rate");
        for r in &rows {
            println!(
                "{:<28} {:>11} {:>10} {:>10} {:>8.4}",
                r["tensor"].as_str().unwrap_or(""),
                format!("{}x{}", r["rows"], r["cols"]),
                r["survivors"].to_string(),
                r["pruned"].to_string(),
                r["rate"].as_f64().unwrap_or(0.0)
            );
        }
        println!(
            "achieved rate {:.6} ({} of {} weights survive)",
            mask.achieved_rate(),
            mask.total_survivors(),
            mask.total_weights()
        );
    }
    Ok(0)
}

pub fn train(a: &TrainArgs, json: bool) -> Result<u8> {
    let cfg = load_config(&a.config)?;
    let config = json!({ "pipeline": serde_json::to_value(&cfg).expect("config serializes"), "out": a.out });
    let mut manifest = RunManifest::start(&sibling_manifest(&a.out), "train", config)?;
    let outcome = (|| {
        cfg.validate()?;
        let corpus = cfg.load_corpus()?;
        manifest.set_corpus(corpus.checksum())?;
        let mut params = cfg.trainer.init::<f64>(corpus.vocab_size());
        let metrics = train_lstm(&mut params, &corpus, &cfg.trainer, None, TrainMode::Initial)?;
        save_model(&params.to_bundle().cast::<f32>(), &a.out)?;
        Ok(metrics)
    })();
    manifest.finish(&outcome)?;
    let metrics = outcome?;
    if json {
        print_json(&json!({ "epochs": metrics, "model": a.out }));
    } else {
        println!("{:>5} {:>10} {:>11} {:>10}", "epoch", "lr", "train_loss", "valid_ppl");
        for m in &metrics {
            println!("{:>5} {:>10.5} {:>11.5} {:>10.4}", m.epoch, m.lr, m.train_loss, m.valid_ppl);
        }
        println!("model written to {}", a.out.display());
    }
    Ok(0)
}

fn record_line(r: &IterationRecord) -> String {
    format!(
        "iter {:>3}  sse {:>14.6}  fp-ppl {:>9.4}  q-ppl {:>9.4}  drift {:>12}  {:>7.1}s",
        r.n,
        r.total_sse,
        r.fp_ppl,
        r.q_ppl,
        r.drift.map(|d| format!("{d:.6}")).unwrap_or_else(|| "-".into()),
        r.seconds
    )
}

pub fn iterate(a: &IterateArgs, json: bool) -> Result<u8> {
    let mut cfg = load_config(&a.config)?;
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    if let Some(c) = &a.corpus {
        cfg.corpus = Some(c.clone());
    }
    if let Some(s) = a.seed {
        cfg.trainer.seed = s;
    }
    if let Some(r) = a.prune_rate {
        cfg.prune_rate = r;
    }
    if let Some(b) = a.histogram_bins {
        cfg.histogram_bins = b;
    }
    cfg.save_quantized |= a.save_quantized;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs/iterate"));
    cfg.output_dir = Some(out.clone());

    let config = serde_json::to_value(&cfg).expect("config serializes");
    let mut manifest = RunManifest::start(&out.join("manifest.json"), "iterate", config)?;
    let outcome = (|| {
        cfg.validate()?;
        let corpus = cfg.load_corpus()?;
        manifest.set_corpus(corpus.checksum())?;
        if !json {
            println!(
                "corpus: {} train / {} valid bytes, vocabulary {}",
                corpus.train().len(),
                corpus.valid().len(),
                corpus.vocab_size()
            );
        }
        run_lstm_pipeline(&cfg, &corpus, &mut |r| {
            if !json {
                println!("{}", record_line(r));
            }
        })
    })();
    manifest.finish(&outcome)?;
    let outcome = outcome?;
    if json {
        print_json(&json!({
            "run_dir": out,
            "records": outcome.records,
            "best_iteration": outcome.best_iteration,
            "stopped_early": outcome.stopped_early,
        }));
    } else {
        if outcome.stopped_early {
            println!("stopped early after iteration {}", outcome.records.len());
        }
        println!("best quantized iteration: {}; run directory {}", outcome.best_iteration, out.display());
    }
    Ok(0)
}

fn report_json(r: &StorageReport) -> serde_json::Value {
    let mut v = serde_json::to_value(r).expect("report serializes");
    v["table_size_kib"] = json!(r.table_size_kib());
    v["weight_payload_kib"] = json!(r.weight_payload_kib());
    v["compression_vs_ternary"] = json!(r.compression_vs(2.0));
    v
}

fn dry_run(a: &ReportArgs, rows: usize, cols: usize) -> Vec<serde_json::Value> {
    let mut out = Vec::new();
    for &bits in &a.bits {
        for &tables in &a.tables {
            let p = StorageParams {
                rows,
                cols,
                bits,
                tables_per_row: tables,
                prune_rate: a.prune_rate,
                mask_bits_per_weight: a.mask_bits,
                alpha_bits: a.alpha_bits,
            };
            let mut v = report_json(&storage_report(&p));
            v["bits"] = json!(bits);
            v["tables_per_row"] = json!(tables);
            out.push(v);
        }
    }
    out
}

fn quantized_summary(path: &Path, q: &QTensor, dtype: AlphaDtype, a: &ReportArgs) -> serde_json::Value {
    let (rows, cols) = q.shape();
    let prune_rate = q
        .mask()
        .map(|m| 1.0 - m.count_ones() as f64 / m.len().max(1) as f64)
        .unwrap_or(0.0);
    let p = StorageParams {
        rows,
        cols,
        bits: q.bits(),
        tables_per_row: q.tables_per_row(),
        prune_rate,
        mask_bits_per_weight: a.mask_bits,
        alpha_bits: dtype.bits(),
    };
    let mut v = report_json(&storage_report(&p));
    v["file"] = json!(path);
    v["rows"] = json!(rows);
    v["cols"] = json!(cols);
    v["bits"] = json!(q.bits());
    v["tables_per_row"] = json!(q.tables_per_row());
    v["prune_rate"] = json!(prune_rate);
    v["csr_bits_per_weight_f32"] = json!(csr_bits_estimate(rows, cols, prune_rate, 32, 32));
    v
}

fn print_storage_rows(rows: &[serde_json::Value]) {
    println!(
        "{:<32} {:>4} {:>4} {:>12} {:>14} {:>12} {:>10} {:>10}",
        "item", "k", "T", "table_KB", "payload_KB", "bits/weight", "vs_f32", "vs_ternary"
    );
    for r in rows {
        let label = r
            .get("file")
            .and_then(|f| f.as_str())
            .map(|f| Path::new(f).file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
            .unwrap_or_else(|| "dry-run".into());
        println!(
            "{:<32} {:>4} {:>4} {:>12.5} {:>14.4} {:>12.4} {:>9.1}x {:>9.2}x{}",
            label,
            r["bits"].to_string(),
            r["tables_per_row"].to_string(),
            r["table_size_kib"].as_f64().unwrap_or(0.0),
            r["weight_payload_kib"].as_f64().unwrap_or(0.0),
            r["total_bits_per_weight"].as_f64().unwrap_or(0.0),
            r["compression_vs_float32"].as_f64().unwrap_or(0.0),
            r["compression_vs_ternary"].as_f64().unwrap_or(0.0),
            if r["alpha_overhead_flag"].as_bool() == Some(true) { "  (alpha tables > 5%)" } else { "" }
        );
    }
}

fn read_magic(path: &Path) -> Result<[u8; 4]> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    bytes
        .get(..4)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::Format(format!("{}: too short to be an artifact", path.display())))
}

fn histogram_dir(a: &ReportArgs) -> Result<Option<&Path>> {
    match &a.histograms {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Ok(Some(dir))
        }
        None => Ok(None),
    }
}

fn report_artifact(path: &Path, a: &ReportArgs, json: bool) -> Result<()> {
    let magic = read_magic(path)?;
    let hist = histogram_dir(a)?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if &magic == IQQT_MAGIC {
        let (q, dtype): (QTensor, AlphaDtype) = load_quantized(path)?;
        if let Some(dir) = hist {
            histogram_export_quantized(&q, a.bins, &dir.join(format!("{stem}_q.csv")))?;
        }
        let v = quantized_summary(path, &q, dtype, a);
        if json {
            print_json(&v);
        } else {
            print_storage_rows(&[v]);
        }
    } else if &magic == IQWT_MAGIC {
        let bundle: Bundle = load_model(path)?;
        let mut rows = Vec::new();
        for (name, m) in bundle.iter() {
            if let Some(dir) = hist {
                histogram_export(m, a.bins, &dir.join(format!("{}.csv", file_name(name))))?;
            }
            rows.push(json!({ "tensor": name, "rows": m.rows(), "cols": m.cols(), "max_abs": m.max_abs() }));
        }
        if json {
            print_json(&json!({ "tensors": rows, "metadata": bundle.metadata }));
        } else {
            println!("{:<28} {:>11} {:>12}", "tensor", "shape", "max|w|");
            for r in &rows {
                println!(
                    "{:<28} {:>11} {:>12.6}",
                    r["tensor"].as_str().unwrap_or(""),
                    format!("{}x{}", r["rows"], r["cols"]),
                    r["max_abs"].as_f64().unwrap_or(0.0)
                );
            }
        }
    } else if &magic == IQMK_MAGIC {
        let mask = load_mask(path)?;
        let v = json!({
            "rate": mask.rate, "scope": mask.scope, "achieved_rate": mask.achieved_rate(),
            "survivors": mask.total_survivors(), "weights": mask.total_weights(),
        });
        if json {
            print_json(&v);
        } else {
            println!(
                "mask: requested rate {} achieved {:.6}, {} of {} weights survive",
                mask.rate,
                mask.achieved_rate(),
                mask.total_survivors(),
                mask.total_weights()
            );
        }
    } else {
        return Err(Error::Format(format!("{}: unknown artifact magic {magic:?}", path.display())));
    }
    Ok(())
}

fn report_run_dir(dir: &Path, a: &ReportArgs, json: bool) -> Result<()> {
    let records_path = dir.join("records.csv");
    let mut reader = csv::Reader::from_path(&records_path)
        .map_err(|e| Error::Format(format!("{}: {e}", records_path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", records_path.display())))?
        .clone();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Format(format!("{}: {e}", records_path.display())))?;
        let obj: serde_json::Map<String, serde_json::Value> =
            headers.iter().zip(row.iter()).map(|(h, v)| (h.to_string(), json!(v))).collect();
        records.push(serde_json::Value::Object(obj));
    }
    let hist = histogram_dir(a)?;
    let mut storage = Vec::new();
    let best = dir.join("best");
    if best.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(&best)
            .map_err(|e| Error::io(&best, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "iqqt"))
            .collect();
        files.sort();
        for f in files {
            let (q, dtype): (QTensor, AlphaDtype) = load_quantized(&f)?;
            if let Some(h) = hist {
                let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                histogram_export_quantized(&q, a.bins, &h.join(format!("{stem}_q.csv")))?;
            }
            storage.push(quantized_summary(&f, &q, dtype, a));
        }
    }
    if json {
        print_json(&json!({ "records": records, "best_storage": storage }));
    } else {
        println!("{}", headers.iter().take(6).map(|h| format!("{h:>14}")).collect::<String>());
        for r in &records {
            let line: String = headers
                .iter()
                .take(6)
                .map(|h| {
                    let v = r[h].as_str().unwrap_or("");
                    match v.parse::<f64>() {
                        Ok(x) if h != "n" => format!("{x:>14.4}"),
                        _ => format!("{v:>14}"),
                    }
                })
                .collect();
            println!("{line}");
        }
        if !storage.is_empty() {
            println!();
            print_storage_rows(&storage);
        }
    }
    Ok(())
}

pub fn report(a: &ReportArgs, json: bool) -> Result<u8> {
    if let Some(path) = &a.artifact {
        report_artifact(path, a, json)?;
    } else if let Some(dir) = &a.run_dir {
        report_run_dir(dir, a, json)?;
    } else if let (Some(rows), Some(cols)) = (a.rows, a.cols) {
        let grid = dry_run(a, rows, cols);
        if json {
            print_json(&json!({ "rows": rows, "cols": cols, "alpha_bits": a.alpha_bits, "reports": grid }));
        } else {
            println!("dry run: {rows}x{cols}, {}-bit alphas, prune rate {}, mask {} bits/weight", a.alpha_bits, a.prune_rate, a.mask_bits);
            print_storage_rows(&grid);
            if let [only] = grid.as_slice() {
                println!(
                    "{:.3} bits/weight, {:.1}× vs f32, {:.2}× vs 2-bit",
                    only["total_bits_per_weight"].as_f64().unwrap_or(0.0),
                    only["compression_vs_float32"].as_f64().unwrap_or(0.0),
                    only["compression_vs_ternary"].as_f64().unwrap_or(0.0)
                );
            }
        }
    } else {
        return Err(Error::Validation(
            "report needs --artifact, --run-dir, or --rows and --cols for a dry run".into(),
        ));
    }
    Ok(0)
}

pub fn selftest(json: bool) -> Result<u8> {
    let results = run_selftest(&Hooks::default());
    let ok = results.iter().all(|r| r.passed);
    if json {
        print_json(&json!({ "passed": ok, "suites": results }));
    } else {
        for r in &results {
            println!(
                "{} {:<24} {} ({:.2}s)",
                if r.passed { "PASS" } else { "FAIL" },
                r.name,
                r.detail,
                r.seconds
            );
        }
    }
    Ok(if ok { 0 } else { 1 })
}
