//! Text model files: a header, the embedded training configuration, layer
//! widths, then one named block per parameter with every value written as
//! the hex bit pattern of its `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tensor::Tensor;
use crate::trainer::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "degfair-model";
const CONFIG_END: &str = "end-config";

#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub config: TrainConfig,
    pub params: ModelParams,
}

fn dims_of(params: &ModelParams) -> Vec<usize> {
    let mut dims = vec![params.layers[0].theta_c0.weight.rows()];
    dims.extend(params.layers.iter().map(|l| l.theta_c0.weight.cols()));
    dims
}

pub fn model_to_string(params: &ModelParams, config: &TrainConfig) -> Result<String> {
    let cfg = toml::to_string(config).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = format!("{MAGIC} {FORMAT_VERSION}\n{cfg}");
    if !out.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(CONFIG_END);
    out.push('\n');
    let dims: Vec<String> = dims_of(params).iter().map(|d| d.to_string()).collect();
    writeln!(out, "dims {}", dims.join(" ")).unwrap();
    for (name, _, t) in params.entries() {
        writeln!(out, "param {name} {} {}", t.rows(), t.cols()).unwrap();
        for r in 0..t.rows() {
            let row: Vec<String> = t.row(r).iter().map(|x| format!("{:016x}", x.to_bits())).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
    }
    out.push_str("end\n");
    Ok(out)
}

pub fn save_model(params: &ModelParams, config: &TrainConfig, path: &Path) -> Result<()> {
    fs::write(path, model_to_string(params, config)?).map_err(|e| Error::io(path, e))
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

pub fn model_from_str(text: &str) -> Result<SavedModel> {
    let mut lines = text.lines().enumerate();
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| corrupt(format!("file ends before {what}")))
    };

    let (_, header) = next("header")?;
    let version = match header.split_once(' ') {
        Some((MAGIC, v)) => v,
        _ => return Err(corrupt("missing model header")),
    };
    if version.parse::<u32>().ok() != Some(FORMAT_VERSION) {
        return Err(Error::Version {
            found: version.to_string(),
            expected: FORMAT_VERSION,
        });
    }

    let mut cfg_text = String::new();
    loop {
        let (_, line) = next("end of configuration")?;
        if line == CONFIG_END {
            break;
        }
        cfg_text.push_str(line);
        cfg_text.push('\n');
    }
    let config: TrainConfig = toml::from_str(&cfg_text).map_err(|e| corrupt(format!("embedded config: {e}")))?;

    let (ln, dims_line) = next("layer widths")?;
    let dims = dims_line
        .strip_prefix("dims ")
        .ok_or_else(|| corrupt(format!("line {}: expected layer widths", ln + 1)))?
        .split(' ')
        .map(|d| d.parse::<usize>().map_err(|_| corrupt(format!("line {}: bad width {d:?}", ln + 1))))
        .collect::<Result<Vec<_>>>()?;
    if dims.len() != config.num_layers + 1 {
        return Err(corrupt(format!(
            "{} layer widths for a {}-layer model",
            dims.len(),
            config.num_layers
        )));
    }
    let arch = crate::params::Architecture {
        kind: config.base_gnn,
        dims,
        gat_heads: config.gat_heads,
    };
    let template = ModelParams::zeros(&arch).map_err(|e| corrupt(e.to_string()))?;

    let mut blocks = Vec::new();
    for (name, _, t) in template.entries() {
        let (ln, head) = next(&format!("parameter {name}"))?;
        let expected = format!("param {name} {} {}", t.rows(), t.cols());
        if head != expected {
            return Err(corrupt(format!("line {}: expected {expected:?}, found {head:?}", ln + 1)));
        }
        let mut data = Vec::with_capacity(t.len());
        for _ in 0..t.rows() {
            let (ln, row) = next(&format!("values of {name}"))?;
            let before = data.len();
            for tok in row.split(' ') {
                let bits = u64::from_str_radix(tok, 16)
                    .ok()
                    .filter(|_| tok.len() == 16)
                    .ok_or_else(|| corrupt(format!("line {}: bad value {tok:?}", ln + 1)))?;
                data.push(f64::from_bits(bits));
            }
            if data.len() - before != t.cols() {
                return Err(corrupt(format!("line {}: expected {} values", ln + 1, t.cols())));
            }
        }
        blocks.push(Tensor::from_vec(t.rows(), t.cols(), data)?);
    }
    let (ln, tail) = next("end marker")?;
    if tail != "end" {
        return Err(corrupt(format!("line {}: expected end marker", ln + 1)));
    }
    if let Some((ln, _)) = next("").ok().filter(|(_, l)| !l.is_empty()) {
        return Err(corrupt(format!("line {}: content after end marker", ln + 1)));
    }

    let mut params = template;
    for (slot, value) in params.values_mut().into_iter().zip(blocks) {
        *slot = value;
    }
    Ok(SavedModel { config, params })
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::BaseKind;
    use crate::synth::{synth_generate, SynthParams};
    use crate::trainer::{init_params, predict_probs, Threshold};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(kind: BaseKind) -> (ModelParams, TrainConfig) {
        let cfg = TrainConfig {
            base_gnn: kind,
            hidden_dim: 6,
            gat_heads: 2,
            k: Threshold::Value(2.5),
            eps: 0.3,
            ..TrainConfig::default()
        };
        let arch = cfg.architecture(4, 2);
        (init_params(&arch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap(), cfg)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let g = synth_generate(&SynthParams {
            n: 30,
            attach: 2,
            label_bias: 0.9,
            feat_dim: 4,
            seed: 0,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        for kind in [BaseKind::Gcn, BaseKind::Sage, BaseKind::Gat] {
            let (params, cfg) = model(kind);
            let path = dir.path().join(format!("{}.model", kind.name()));
            save_model(&params, &cfg, &path).unwrap();
            let loaded = load_model(&path).unwrap();
            assert_eq!(loaded.config, cfg);
            assert_eq!(loaded.params, params);
            let a = predict_probs(&params, &g, &cfg).unwrap();
            let b = predict_probs(&loaded.params, &g, &loaded.config).unwrap();
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn truncation_is_corrupt() {
        let (params, cfg) = model(BaseKind::Sage);
        let text = model_to_string(&params, &cfg).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        for cut in [1, lines.len() / 2, lines.len() - 1] {
            let truncated = lines[..cut].join("\n");
            assert!(matches!(model_from_str(&truncated), Err(Error::Corrupt(_))), "cut {cut}");
        }
        let chopped = &text[..text.len() - 12];
        assert!(matches!(model_from_str(chopped), Err(Error::Corrupt(_))));
    }

    #[test]
    fn version_and_garbage() {
        let (params, cfg) = model(BaseKind::Gcn);
        let text = model_to_string(&params, &cfg).unwrap();
        let v2 = text.replacen("degfair-model 1", "degfair-model 2", 1);
        assert!(matches!(model_from_str(&v2), Err(Error::Version { .. })));
        assert!(matches!(model_from_str("hello\n"), Err(Error::Corrupt(_))));
        let extra = format!("{text}param x 1 1\n");
        assert!(matches!(model_from_str(&extra), Err(Error::Corrupt(_))));
        let bad = text.replacen("param layer0.omega.weight", "param layer0.omega.wrong", 1);
        assert!(matches!(model_from_str(&bad), Err(Error::Corrupt(_))));
    }
}
