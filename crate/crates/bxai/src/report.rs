//! Text outputs: retrieval JSON lines and CSV tables.

use std::fmt::Write as _;

use bxai_core::dsp::HealthClass;
use bxai_core::eval::{ConfusionMatrix, JobOutcome};
use bxai_core::nn::EpochStats;
use bxai_core::retrieval::PredictionBasis;

/// `v` with 9 significant digits, as a JSON-compatible number. Parsing the
/// result gives back `v` rounded to 9 significant digits.
pub fn sig9(v: f64) -> String {
    if !v.is_finite() {
        return "NaN".to_string();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let s = format!("{v:.8e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// One JSON object (without newline) for a retrieval result.
pub fn basis_json(b: &PredictionBasis) -> String {
    let mut out = String::new();
    write!(
        out,
        "{{\"sample_id\":{},\"predicted_class\":\"{}\",\"algo\":\"{}\",\"fallback_to_full\":{},\"probabilities\":[",
        b.sample_id,
        b.predicted.name(),
        b.algo.name(),
        b.fallback
    )
    .unwrap();
    let probs: Vec<String> = b.probabilities.iter().map(|&p| sig9(p)).collect();
    out.push_str(&probs.join(","));
    out.push_str("],\"basis\":[");
    let basis: Vec<String> = b
        .basis
        .iter()
        .map(|e| {
            format!(
                "{{\"entry_id\":{},\"class\":\"{}\",\"distance\":{}}}",
                e.entry_id,
                e.class.name(),
                sig9(e.distance)
            )
        })
        .collect();
    out.push_str(&basis.join(","));
    out.push_str("]}");
    out
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
    let opt = |v: Option<f64>| v.map_or_else(String::new, sig9);
    for e in history {
        writeln!(
            out,
            "{},{},{},{},{}",
            e.epoch,
            sig9(e.train_loss),
            sig9(e.train_accuracy),
            opt(e.val_loss),
            opt(e.val_accuracy)
        )
        .unwrap();
    }
    out
}

/// One row per run; failed runs carry `NaN` metrics.
pub fn removal_csv(outcomes: &[JobOutcome]) -> String {
    let mut out = String::from("method,fraction,repeat,seed,test_accuracy,test_loss\n");
    for o in outcomes {
        let (acc, loss) = match &o.result {
            Ok(m) => (sig9(m.accuracy), sig9(m.loss)),
            Err(_) => ("NaN".to_string(), "NaN".to_string()),
        };
        writeln!(
            out,
            "{},{},{},{},{acc},{loss}",
            o.job.method.map_or("baseline", |m| m.name()),
            sig9(o.job.fraction),
            o.job.repeat,
            o.job.train_seed
        )
        .unwrap();
    }
    out
}

/// Rows are true classes, columns predicted classes.
pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let name = |i: usize| HealthClass::from_index(i).map_or_else(|| format!("class_{i}"), |c| c.name().to_string());
    let mut out = String::from("true\\predicted");
    for j in 0..cm.n_classes {
        write!(out, ",{}", name(j)).unwrap();
    }
    out.push('\n');
    for i in 0..cm.n_classes {
        out.push_str(&name(i));
        for j in 0..cm.n_classes {
            write!(out, ",{}", cm.get(i, j)).unwrap();
        }
        out.push('\n');
    }
    out
}
