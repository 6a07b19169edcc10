//! Epoch-indexed task-weight schedules.
//!
//! Every weight moves between a low and a high state through the logistic
//! gate `gate(n; Ns, sigma) = exp((n - Ns)/sigma) / (1 + exp((n - Ns)/sigma))`.
//!
//! | strategy | token              | sentence                     | text                       |
//! |----------|--------------------|------------------------------|----------------------------|
//! | S1       | `1 - gate(Ns_tok)` | `gate(Ns_tok) - gate(Ns_sent)` | `gate(Ns_sent)`          |
//! | S2       | `l_tok`            | `l_sent * gate(Ns_tok)`      | `l_tex * gate(Ns_sent)`    |
//! | S3       | `l_tok`            | `l_sent * gate(Ns_tok)`      | `l_tex * gate(Ns_tok)`     |
//! | S4       | `l_tok`            | `l_sent * gate(Ns_sent)`     | `l_tex * gate(Ns_tok)`     |
//! | fixed    | `l_tok`            | `l_sent`                     | `l_tex`                    |
//!
//! where `(l_tok, l_sent, l_tex)` are the stationary weights.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::TaskWeights;
use crate::scalar::sigmoid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(alias = "s1")]
    S1,
    #[serde(alias = "s2")]
    S2,
    #[serde(alias = "s3")]
    S3,
    #[serde(alias = "s4")]
    S4,
    /// Constant weights equal to the stationary values.
    #[serde(rename = "fixed")]
    Fixed,
}

impl StrategyKind {
    pub const SCHEDULED: [StrategyKind; 4] = [
        StrategyKind::S1,
        StrategyKind::S2,
        StrategyKind::S3,
        StrategyKind::S4,
    ];
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::S1 => "S1",
            StrategyKind::S2 => "S2",
            StrategyKind::S3 => "S3",
            StrategyKind::S4 => "S4",
            StrategyKind::Fixed => "fixed",
        })
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(StrategyKind::S1),
            "S2" => Ok(StrategyKind::S2),
            "S3" => Ok(StrategyKind::S3),
            "S4" => Ok(StrategyKind::S4),
            "FIXED" => Ok(StrategyKind::Fixed),
            _ => Err(Error::InvalidArgument(format!(
                "unknown strategy `{s}` (expected S1, S2, S3, S4 or fixed)"
            ))),
        }
    }
}

pub const DEFAULT_NS_TOKEN: usize = 10;
pub const DEFAULT_NS_SENTENCE: usize = 30;
/// Stationary weights `(token, sentence, text)`.
pub const DEFAULT_STATIONARY: [f64; 3] = [0.05, 0.5, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub ns_token: usize,
    pub ns_sentence: usize,
    pub sigma: f64,
    pub stationary: [f64; 3],
}

impl StrategySpec {
    /// Switch epochs 10 and 30 with stationary weights (0.05, 0.5, 1).
    pub fn new(kind: StrategyKind, sigma: f64) -> Self {
        Self {
            kind,
            ns_token: DEFAULT_NS_TOKEN,
            ns_sentence: DEFAULT_NS_SENTENCE,
            sigma,
            stationary: DEFAULT_STATIONARY,
        }
    }

    pub fn fixed(weights: [f64; 3]) -> Self {
        Self {
            stationary: weights,
            ..Self::new(StrategyKind::Fixed, 1.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if matches!(self.kind, StrategyKind::S1 | StrategyKind::S2)
            && self.ns_token > self.ns_sentence
        {
            return Err(Error::InvalidArgument(format!(
                "{} needs ns_token <= ns_sentence ({} > {})",
                self.kind, self.ns_token, self.ns_sentence
            )));
        }
        if self
            .stationary
            .iter()
            .any(|&w| !(w >= 0.0 && w.is_finite()))
            || self.stationary.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::InvalidArgument(
                "stationary weights must be nonnegative and not all zero".into(),
            ));
        }
        Ok(())
    }
}

/// Logistic switch centred on `ns`; 0.5 at `n == ns`.
pub fn sigmoid_gate(n: f64, ns: f64, sigma: f64) -> f64 {
    sigmoid((n - ns) / sigma)
}

/// Task weights at `epoch`.
pub fn lambda_at(spec: &StrategySpec, epoch: usize) -> Result<TaskWeights> {
    spec.validate()?;
    let n = epoch as f64;
    let g_tok = sigmoid_gate(n, spec.ns_token as f64, spec.sigma);
    let g_sent = sigmoid_gate(n, spec.ns_sentence as f64, spec.sigma);
    let [l_tok, l_sent, l_tex] = spec.stationary;
    let (tok, sent, tex) = match spec.kind {
        StrategyKind::S1 => (1.0 - g_tok, g_tok - g_sent, g_sent),
        StrategyKind::S2 => (l_tok, l_sent * g_tok, l_tex * g_sent),
        StrategyKind::S3 => (l_tok, l_sent * g_tok, l_tex * g_tok),
        StrategyKind::S4 => (l_tok, l_sent * g_sent, l_tex * g_tok),
        StrategyKind::Fixed => (l_tok, l_sent, l_tex),
    };
    Ok(TaskWeights {
        token: tok.max(0.0),
        sentence: sent.max(0.0),
        text: tex.max(0.0),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimplexPoint {
    pub epoch: usize,
    pub weights: TaskWeights,
    /// `weights / sum(weights)`.
    pub normalized: [f64; 3],
}

/// Weights and their projection onto the probability simplex for epochs
/// `0..n_epochs`.
pub fn simplex_path(spec: &StrategySpec, n_epochs: usize) -> Result<Vec<SimplexPoint>> {
    if n_epochs == 0 {
        return Err(Error::InvalidArgument("n_epochs must be at least 1".into()));
    }
    (0..n_epochs)
        .map(|epoch| {
            let w = lambda_at(spec, epoch)?;
            let total = w.token + w.sentence + w.text;
            if total <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "weights sum to zero at epoch {epoch}"
                )));
            }
            Ok(SimplexPoint {
                epoch,
                weights: w,
                normalized: [w.token / total, w.sentence / total, w.text / total],
            })
        })
        .collect()
}

pub fn write_simplex_csv<W: Write>(points: &[SimplexPoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "epoch",
        "lambda_tok",
        "lambda_sent",
        "lambda_tex",
        "norm_tok",
        "norm_sent",
        "norm_tex",
    ])?;
    for p in points {
        out.write_record([
            p.epoch.to_string(),
            p.weights.token.to_string(),
            p.weights.sentence.to_string(),
            p.weights.text.to_string(),
            p.normalized[0].to_string(),
            p.normalized[1].to_string(),
            p.normalized[2].to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Static SVG of the path inside the simplex triangle (token, sentence and
/// text corners at bottom-left, bottom-right and top).
pub fn simplex_svg(points: &[SimplexPoint], title: &str) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 40.0;
    let h = SIZE * 3f64.sqrt() / 2.0;
    let project = |n: &[f64; 3]| {
        let x = PAD + SIZE * (n[1] + 0.5 * n[2]);
        let y = PAD + h * (1.0 - n[2]);
        (x, y)
    };
    let corners = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]].map(|c| project(&c));
    let path: Vec<String> = points
        .iter()
        .map(|p| {
            let (x, y) = project(&p.normalized);
            format!("{x:.3},{y:.3}")
        })
        .collect();
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{hh}\" viewBox=\"0 0 {w} {hh}\">\n",
        w = SIZE + 2.0 * PAD,
        hh = h + 2.0 * PAD + 20.0
    ));
    svg.push_str(&format!(
        "<polygon points=\"{:.3},{:.3} {:.3},{:.3} {:.3},{:.3}\" fill=\"none\" stroke=\"black\"/>\n",
        corners[0].0, corners[0].1, corners[1].0, corners[1].1, corners[2].0, corners[2].1
    ));
    for (label, (x, y), dy) in [
        ("token", corners[0], 16.0),
        ("sentence", corners[1], 16.0),
        ("text", corners[2], -6.0),
    ] {
        svg.push_str(&format!(
            "<text x=\"{x:.3}\" y=\"{:.3}\" font-size=\"12\" text-anchor=\"middle\">{label}</text>\n",
            y + dy
        ));
    }
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n",
        path.join(" ")
    ));
    svg.push_str(&format!(
        "<text x=\"{:.3}\" y=\"{:.3}\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        PAD + SIZE / 2.0,
        h + 2.0 * PAD + 10.0,
        title
    ));
    svg.push_str("</svg>\n");
    svg
}
