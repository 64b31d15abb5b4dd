//! Per-step training metrics as an append-only CSV, flushed every row so
//! crashed runs remain inspectable.

use eoe_core::Error;
use std::fs::File;
use std::io::Write;
use std::path::Path;

pub const METRICS_HEADER: &str = "step,expert,loss,best_loss,lr,tokens_per_sec,copied,mutated";

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub expert_id: usize,
    pub train_loss: f64,
    pub best_loss: f64,
    pub lr: f64,
    /// Zero in deterministic mode so the file is byte-stable.
    pub tokens_per_sec: f64,
    pub copied: u64,
    pub mutated: u64,
}

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.expert_id,
            format_sig6(self.train_loss),
            format_sig6(self.best_loss),
            format_sig6(self.lr),
            format_sig6(self.tokens_per_sec),
            self.copied,
            self.mutated
        )
    }
}

/// Formats with six significant digits, positional when the exponent lies in
/// `[-4, 5]` and scientific otherwise, trailing zeros stripped.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.5e}", x); // six significant digits: d.dddddE
    let (mant, exp) = sci.split_once('e').expect("{:.5e} always has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    let neg = mant.starts_with('-');
    let digits: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    debug_assert_eq!(digits.len(), 6);

    let body = if (-4..6).contains(&exp) {
        let mut s = String::new();
        if exp >= 0 {
            let point = exp as usize + 1;
            s.push_str(&digits[..point.min(6)]);
            if point < 6 {
                s.push('.');
                s.push_str(&digits[point..]);
            }
        } else {
            s.push_str("0.");
            for _ in 0..(-exp - 1) {
                s.push('0');
            }
            s.push_str(&digits);
        }
        if s.contains('.') {
            s = s.trim_end_matches('0').trim_end_matches('.').to_string();
        }
        s
    } else {
        let mant = mant
            .trim_start_matches('-')
            .trim_end_matches('0')
            .trim_end_matches('.');
        format!("{mant}e{exp}")
    };
    if neg {
        format!("-{body}")
    } else {
        body
    }
}

/// Writer that emits the header on creation and flushes after every row.
pub struct MetricsWriter {
    file: File,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, Error> {
        let mut file = File::create(path.as_ref())
            .map_err(|e| Error::Input(format!("creating {}: {e}", path.as_ref().display())))?;
        writeln!(file, "{METRICS_HEADER}").map_err(|e| Error::Input(format!("metrics write: {e}")))?;
        file.flush().map_err(|e| Error::Input(format!("metrics flush: {e}")))?;
        Ok(MetricsWriter { file })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<(), Error> {
        writeln!(self.file, "{}", record.to_csv_row())
            .map_err(|e| Error::Input(format!("metrics write: {e}")))?;
        self.file.flush().map_err(|e| Error::Input(format!("metrics flush: {e}")))
    }
}
