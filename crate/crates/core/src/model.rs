//! Linear scoring model and its text serialization.
//!
//! File layout: a `#model<TAB>name` line, a `#dimension<TAB>D` line, then one
//! `index<TAB>weight` line per non-zero weight. Multi-part models (DFM) add
//! `#section<TAB>name` lines before each part.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::data::{FeatureVector, Label};
use crate::error::{DflError, Result};
use crate::risk::sigmoid;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    weights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub score: f64,
    pub probability: f64,
}

impl Prediction {
    pub fn label(&self) -> Label {
        Label::from_score(self.score)
    }
}

impl LinearModel {
    pub fn zeros(dimension: usize) -> Self {
        LinearModel {
            weights: vec![0.0; dimension],
        }
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if let Some(bad) = weights.iter().find(|w| !w.is_finite()) {
            return Err(DflError::Config(format!("non-finite weight {bad}")));
        }
        Ok(LinearModel { weights })
    }

    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `g(x)`: sum of the weights at the active indices.
    pub fn score(&self, x: &FeatureVector) -> Result<f64> {
        if x.dimension() != self.dimension() {
            return Err(DflError::DimensionMismatch {
                expected: self.dimension(),
                got: x.dimension(),
            });
        }
        Ok(self.score_indices(x.indices()))
    }

    pub(crate) fn score_indices(&self, indices: &[u32]) -> f64 {
        indices.iter().map(|&i| self.weights[i as usize]).sum()
    }

    pub fn predict(&self, x: &FeatureVector) -> Result<Prediction> {
        let score = self.score(x)?;
        Ok(Prediction {
            score,
            probability: sigmoid(score),
        })
    }
}

pub fn predict(model: &LinearModel, x: &FeatureVector) -> Result<Prediction> {
    model.predict(x)
}

fn write_weights(buf: &mut String, model: &LinearModel) {
    for (i, w) in model.weights.iter().enumerate() {
        if *w != 0.0 {
            let _ = writeln!(buf, "{i}\t{w}");
        }
    }
}

pub fn write_model<W: Write>(mut out: W, method: &str, model: &LinearModel) -> Result<()> {
    let mut buf = format!("#model\t{method}\n#dimension\t{}\n", model.dimension());
    write_weights(&mut buf, model);
    out.write_all(buf.as_bytes())?;
    out.flush()?;
    Ok(())
}

/// Writes several equally-sized models under named sections.
pub fn write_model_sections<W: Write>(
    mut out: W,
    method: &str,
    sections: &[(&str, &LinearModel)],
) -> Result<()> {
    let dim = sections.first().map(|(_, m)| m.dimension()).unwrap_or(0);
    if let Some((_, m)) = sections.iter().find(|(_, m)| m.dimension() != dim) {
        return Err(DflError::DimensionMismatch {
            expected: dim,
            got: m.dimension(),
        });
    }
    let mut buf = format!("#model\t{method}\n#dimension\t{dim}\n");
    for (name, m) in sections {
        let _ = writeln!(buf, "#section\t{name}");
        write_weights(&mut buf, m);
    }
    out.write_all(buf.as_bytes())?;
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub method: String,
    pub sections: Vec<(String, LinearModel)>,
}

impl ModelFile {
    /// The scoring part: the `cvr` section if present, else the first one.
    pub fn scoring_model(&self) -> Option<&LinearModel> {
        self.sections
            .iter()
            .find(|(n, _)| n == "cvr")
            .or_else(|| self.sections.first())
            .map(|(_, m)| m)
    }
}

pub fn read_model<R: BufRead>(input: R) -> Result<ModelFile> {
    let mut method = None;
    let mut dimension = None;
    let mut sections: Vec<(String, LinearModel)> = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('\t')
            .ok_or_else(|| DflError::parse(line_no, format!("expected a tab in {line:?}")))?;
        match key {
            "#model" => method = Some(value.to_string()),
            "#dimension" => {
                dimension = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| DflError::parse(line_no, "bad dimension"))?,
                )
            }
            "#section" => {
                let dim = dimension.ok_or_else(|| DflError::parse(line_no, "section before #dimension"))?;
                sections.push((value.to_string(), LinearModel::zeros(dim)));
            }
            _ => {
                let dim = dimension.ok_or_else(|| DflError::parse(line_no, "weights before #dimension"))?;
                if sections.is_empty() {
                    sections.push(("weights".to_string(), LinearModel::zeros(dim)));
                }
                let idx: usize = key
                    .parse()
                    .map_err(|_| DflError::parse(line_no, format!("bad index {key:?}")))?;
                let w: f64 = value
                    .parse()
                    .map_err(|_| DflError::parse(line_no, format!("bad weight {value:?}")))?;
                if idx >= dim {
                    return Err(DflError::parse(line_no, format!("index {idx} >= dimension {dim}")));
                }
                let model = &mut sections.last_mut().expect("section exists").1;
                model.weights[idx] = w;
            }
        }
    }
    let method = method.ok_or_else(|| DflError::parse(1, "missing #model header"))?;
    let dim = dimension.ok_or_else(|| DflError::parse(2, "missing #dimension header"))?;
    if sections.is_empty() {
        sections.push(("weights".to_string(), LinearModel::zeros(dim)));
    }
    Ok(ModelFile { method, sections })
}
