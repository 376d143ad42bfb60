//! Plain-text checkpoint: `neurodob-ckpt v1`, layer widths, per-layer weight
//! and bias lines, per-hidden-layer BN scale/shift/mean/var lines, then the
//! standardizer means and stds (inputs followed by the output). Floats carry
//! 17 significant digits so a load reproduces the saved bits.

use std::fmt::Write as _;
use std::path::Path;

use super::mlp::{MlpModel, Mode, DEFAULT_DROPOUT};
use super::standardize::Standardizer;
use crate::error::{Error, Result};

pub const HEADER: &str = "neurodob-ckpt v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub standardizer: Standardizer,
}

fn line(out: &mut String, values: &[f64]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{v:.16e}");
    }
    out.push('\n');
}

fn parse_line(text: Option<&str>, what: &str, expected: usize) -> Result<Vec<f64>> {
    let text = text.ok_or_else(|| Error::parse("checkpoint", format!("missing {what}")))?;
    let values = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::parse("checkpoint", format!("{what}: {e}")))?;
    if values.len() != expected {
        return Err(Error::parse(
            "checkpoint",
            format!("{what}: expected {expected} values, found {}", values.len()),
        ));
    }
    Ok(values)
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        s.push_str(HEADER);
        s.push('\n');
        let dims: Vec<String> = m.dims().iter().map(|d| d.to_string()).collect();
        s.push_str(&dims.join(" "));
        s.push('\n');
        for (w, b) in m.weights.iter().zip(&m.biases) {
            line(&mut s, w);
            line(&mut s, b);
        }
        for bn in &m.bn {
            line(&mut s, &bn.scale);
            line(&mut s, &bn.shift);
            line(&mut s, &bn.running_mean);
            line(&mut s, &bn.running_var);
        }
        let st = &self.standardizer;
        let mut means = st.input_mean.clone();
        means.push(st.output_mean);
        let mut stds = st.input_std.clone();
        stds.push(st.output_std);
        line(&mut s, &means);
        line(&mut s, &stds);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::parse("checkpoint", format!("first line must be `{HEADER}`")));
        }
        let dims = lines
            .next()
            .ok_or_else(|| Error::parse("checkpoint", "missing layer dims"))?
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse("checkpoint", format!("layer dims: {e}")))?;
        let mut model = MlpModel::zeros(&dims, DEFAULT_DROPOUT)?;
        for l in 0..dims.len() - 1 {
            model.weights[l] = parse_line(lines.next(), &format!("weights {l}"), dims[l] * dims[l + 1])?;
            model.biases[l] = parse_line(lines.next(), &format!("biases {l}"), dims[l + 1])?;
        }
        for (l, bn) in model.bn.iter_mut().enumerate() {
            let w = dims[l + 1];
            bn.scale = parse_line(lines.next(), &format!("bn scale {l}"), w)?;
            bn.shift = parse_line(lines.next(), &format!("bn shift {l}"), w)?;
            bn.running_mean = parse_line(lines.next(), &format!("bn mean {l}"), w)?;
            bn.running_var = parse_line(lines.next(), &format!("bn var {l}"), w)?;
            if bn.running_var.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::parse("checkpoint", format!("bn var {l}: must be > 0")));
            }
        }
        let n_in = dims[0];
        let means = parse_line(lines.next(), "standardizer means", n_in + 1)?;
        let stds = parse_line(lines.next(), "standardizer stds", n_in + 1)?;
        if stds.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::parse("checkpoint", "standardizer stds must be > 0"));
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::parse("checkpoint", "trailing content"));
        }
        model.set_mode(Mode::Eval);
        Ok(Self {
            model,
            standardizer: Standardizer {
                input_mean: means[..n_in].to_vec(),
                input_std: stds[..n_in].to_vec(),
                output_mean: means[n_in],
                output_std: stds[n_in],
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_checkpoint() -> Checkpoint {
        let mut r = rng::stream(9, rng::NN_INIT);
        let mut model = MlpModel::new(&[5, 6, 4, 1], 0.2, &mut r).unwrap();
        for bn in model.bn.iter_mut() {
            for v in bn.running_var.iter_mut() {
                *v = r.random_range(0.1..3.0);
            }
            for v in bn.running_mean.iter_mut() {
                *v = r.random_range(-1.0..1.0) / 3.0;
            }
        }
        model.set_mode(Mode::Eval);
        Checkpoint {
            model,
            standardizer: Standardizer {
                input_mean: vec![0.1, -0.2, 1.0 / 3.0, 0.0, 7.0],
                input_std: vec![1.0, 0.5, 2.0 / 7.0, 1e-3, 9.0],
                output_mean: 1e-4 / 3.0,
                output_std: 0.011,
            },
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let ck = random_checkpoint();
        let text = ck.to_text();
        let back = Checkpoint::from_text(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_text(), text);
        assert!(text.starts_with("neurodob-ckpt v1\n5 6 4 1\n"));
    }

    #[test]
    fn rejects_truncated() {
        let text = random_checkpoint().to_text();
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(Checkpoint::from_text(&cut).is_err());
        assert!(Checkpoint::from_text("nope\n").is_err());
    }
}
