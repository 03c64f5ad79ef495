//! Confusion matrix and macro-averaged classification metrics.
//!
//! Macro F1 is the harmonic mean of macro precision and macro recall (not the
//! mean of per-class F1 scores). A class whose precision or recall has a zero
//! denominator scores 0 for that quantity.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    /// Correct predictions over total predictions.
    #[default]
    Standard,
    /// `sum(tp) / sum(tp + fp + fn)` over classes.
    TpOverTpFpFn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub total: usize,
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub per_class: Vec<ClassCounts>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    pub accuracy_mode: AccuracyMode,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores predictions over the class indices `0..classes.len()`.
pub fn evaluate(y_true: &[usize], y_pred: &[usize], classes: &[String], mode: AccuracyMode) -> Result<MetricsReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch {
            left: y_true.len(),
            right: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::EmptyInput("no predictions to evaluate"));
    }
    let k = classes.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for c in [t, p] {
            if c >= k {
                return Err(Error::IndexOutOfRange { index: c, bound: k });
            }
        }
        confusion[t][p] += 1;
    }
    let per_class: Vec<ClassCounts> = (0..k)
        .map(|c| ClassCounts {
            tp: confusion[c][c],
            fp: (0..k).filter(|&r| r != c).map(|r| confusion[r][c]).sum(),
            fn_: (0..k).filter(|&p| p != c).map(|p| confusion[c][p]).sum(),
        })
        .collect();
    let precision_macro = per_class.iter().map(|c| ratio(c.tp, c.tp + c.fp)).sum::<f64>() / k as f64;
    let recall_macro = per_class.iter().map(|c| ratio(c.tp, c.tp + c.fn_)).sum::<f64>() / k as f64;
    let f1_macro = if precision_macro + recall_macro > 0.0 {
        2.0 * precision_macro * recall_macro / (precision_macro + recall_macro)
    } else {
        0.0
    };
    let tp: usize = per_class.iter().map(|c| c.tp).sum();
    let accuracy = match mode {
        AccuracyMode::Standard => ratio(tp, y_true.len()),
        AccuracyMode::TpOverTpFpFn => ratio(tp, per_class.iter().map(|c| c.tp + c.fp + c.fn_).sum()),
    };
    Ok(MetricsReport {
        classes: classes.to_vec(),
        total: y_true.len(),
        accuracy,
        precision_macro,
        recall_macro,
        f1_macro,
        per_class,
        confusion,
        accuracy_mode: mode,
    })
}

impl MetricsReport {
    /// Confusion matrix as delimited text, true classes down the side.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for c in &self.classes {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            s.push_str(c);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "flows      {}", self.total);
        let _ = writeln!(s, "accuracy   {:.4}", self.accuracy);
        let _ = writeln!(s, "precision  {:.4}", self.precision_macro);
        let _ = writeln!(s, "recall     {:.4}", self.recall_macro);
        let _ = writeln!(s, "f1         {:.4}", self.f1_macro);
        let _ = writeln!(s);
        let width = self.classes.iter().map(String::len).max().unwrap_or(4).max(6);
        let _ = write!(s, "{:>width$}", "");
        for c in &self.classes {
            let _ = write!(s, " {c:>width$}");
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            let _ = write!(s, "{c:>width$}");
            for v in row {
                let _ = write!(s, " {v:>width$}");
            }
            s.push('\n');
        }
        s
    }

    /// Confusion-matrix heat map as a standalone SVG document.
    pub fn render_svg(&self) -> String {
        let k = self.classes.len();
        let cell = 80;
        let margin = 70;
        let size = margin + cell * k + 10;
        let max = self.confusion.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" font-family=\"sans-serif\" font-size=\"13\">\n"
        );
        for (i, c) in self.classes.iter().enumerate() {
            let mid = margin + cell * i + cell / 2;
            let _ = writeln!(s, "<text x=\"{mid}\" y=\"{}\" text-anchor=\"middle\">{c}</text>", margin - 10);
            let _ = writeln!(s, "<text x=\"{}\" y=\"{mid}\" text-anchor=\"end\">{c}</text>", margin - 8);
        }
        for (r, row) in self.confusion.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let shade = 255 - (200.0 * (*v as f64) / max) as u8;
                let (x, y) = (margin + cell * c, margin + cell * r);
                let _ = writeln!(
                    s,
                    "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},255)\" stroke=\"#444\"/>"
                );
                let _ = writeln!(
                    s,
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{v}</text>",
                    x + cell / 2,
                    y + cell / 2 + 5
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}
