//! Plain-text matrix, model and adapter checkpoints.
//!
//! Every tensor is a block
//!
//! ```text
//! MATRIX <name> <rows> <cols>
//! <cols values, 17 significant digits>   (× rows)
//! ```
//!
//! Values are written in scientific notation with 17 significant digits, so
//! reading a block back is bit-exact. A model checkpoint starts with a
//! `CONFIG key=value ...` line, an adapter checkpoint with a
//! `SPEC method=.. r=.. alpha=.. modules=.. layers=..` line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::adapters::{
    AdapterParams, AdapterSpec, CondLoraParams, CondPair, LoraPair, LoraParams, Method,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{BaseWeights, LayerWeights, ModelConfig, TargetModule};

pub fn write_matrix(out: &mut String, name: &str, m: &Matrix) {
    let _ = writeln!(out, "MATRIX {name} {} {}", m.rows(), m.cols());
    for r in 0..m.rows() {
        let mut first = true;
        for v in m.row(r) {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
}

/// A parsed checkpoint: header lines (anything before the first block, minus
/// blanks and `#` comments) and named matrices in file order.
#[derive(Debug, Clone, Default)]
pub struct Document {
    pub headers: Vec<String>,
    pub matrices: Vec<(String, Matrix)>,
}

impl Document {
    pub fn header(&self, keyword: &str) -> Option<&str> {
        self.headers.iter().find_map(|h| {
            h.strip_prefix(keyword)
                .filter(|rest| rest.is_empty() || rest.starts_with(' '))
                .map(str::trim)
        })
    }

    pub fn into_map(self) -> BTreeMap<String, Matrix> {
        self.matrices.into_iter().collect()
    }
}

pub fn parse_document(text: &str) -> Result<Document> {
    let mut doc = Document::default();
    let mut lines = text.lines().enumerate().peekable();
    while let Some((idx, line)) = lines.next() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some(rest) = trimmed.strip_prefix("MATRIX ") else {
            if !doc.matrices.is_empty() {
                return Err(Error::parse(line_no, "unexpected line after matrix data"));
            }
            doc.headers.push(trimmed.to_string());
            continue;
        };
        let parts: Vec<&str> = rest.split_whitespace().collect();
        let [name, rows, cols] = parts[..] else {
            return Err(Error::parse(
                line_no,
                "expected `MATRIX <name> <rows> <cols>`",
            ));
        };
        let rows: usize = rows
            .parse()
            .map_err(|_| Error::parse(line_no, "bad row count"))?;
        let cols: usize = cols
            .parse()
            .map_err(|_| Error::parse(line_no, "bad column count"))?;
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let (idx, row) = lines
                .next()
                .ok_or_else(|| Error::parse(line_no + r + 1, format!("matrix {name} truncated")))?;
            let before = data.len();
            for tok in row.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(idx + 1, format!("bad value `{tok}`")))?;
                if !v.is_finite() {
                    return Err(Error::parse(idx + 1, "non-finite value"));
                }
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(Error::parse(idx + 1, format!("expected {cols} values")));
            }
        }
        let m = Matrix::new(rows, cols, data).map_err(|e| Error::parse(line_no, e.to_string()))?;
        doc.matrices.push((name.to_string(), m));
    }
    Ok(doc)
}

pub fn read_document(path: &Path) -> Result<Document> {
    parse_document(&std::fs::read_to_string(path)?)
}

/// `key=value` pairs separated by whitespace.
pub fn parse_pairs(s: &str) -> Result<BTreeMap<String, String>> {
    s.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::parse(1, format!("expected key=value, got `{kv}`")))
        })
        .collect()
}

fn get_parsed<T: std::str::FromStr>(pairs: &BTreeMap<String, String>, key: &str) -> Result<T> {
    pairs
        .get(key)
        .ok_or_else(|| Error::parse(1, format!("missing `{key}`")))?
        .parse()
        .map_err(|_| Error::parse(1, format!("bad value for `{key}`")))
}

fn vector(v: &[f64]) -> Matrix {
    Matrix::new(1, v.len(), v.to_vec()).expect("non-empty vector")
}

pub fn model_config_line(c: &ModelConfig) -> String {
    format!(
        "CONFIG n_layers={} d_model={} n_heads={} d_ff={} vocab_size={} max_len={} n_outputs={} seed={}",
        c.n_layers, c.d_model, c.n_heads, c.d_ff, c.vocab_size, c.max_len, c.n_outputs, c.seed
    )
}

pub fn parse_model_config(pairs: &BTreeMap<String, String>) -> Result<ModelConfig> {
    let cfg = ModelConfig {
        n_layers: get_parsed(pairs, "n_layers")?,
        d_model: get_parsed(pairs, "d_model")?,
        n_heads: get_parsed(pairs, "n_heads")?,
        d_ff: get_parsed(pairs, "d_ff")?,
        vocab_size: get_parsed(pairs, "vocab_size")?,
        max_len: get_parsed(pairs, "max_len")?,
        n_outputs: get_parsed(pairs, "n_outputs")?,
        seed: get_parsed(pairs, "seed")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn model_to_string(w: &BaseWeights) -> String {
    let mut out = model_config_line(&w.config);
    out.push('\n');
    write_matrix(&mut out, "embed.token", &w.token_embed);
    write_matrix(&mut out, "embed.pos", &w.pos_embed);
    for (i, layer) in w.layers.iter().enumerate() {
        let l = i + 1;
        for m in TargetModule::ALL {
            write_matrix(&mut out, &format!("layer{l}.{m}"), layer.projection(m));
        }
        write_matrix(&mut out, &format!("layer{l}.ffn_in"), &layer.ffn_in);
        write_matrix(
            &mut out,
            &format!("layer{l}.ffn_in_bias"),
            &vector(&layer.ffn_in_bias),
        );
        write_matrix(&mut out, &format!("layer{l}.ffn_out"), &layer.ffn_out);
        write_matrix(
            &mut out,
            &format!("layer{l}.ffn_out_bias"),
            &vector(&layer.ffn_out_bias),
        );
        write_matrix(
            &mut out,
            &format!("layer{l}.ln1_gain"),
            &vector(&layer.ln1_gain),
        );
        write_matrix(
            &mut out,
            &format!("layer{l}.ln1_bias"),
            &vector(&layer.ln1_bias),
        );
        write_matrix(
            &mut out,
            &format!("layer{l}.ln2_gain"),
            &vector(&layer.ln2_gain),
        );
        write_matrix(
            &mut out,
            &format!("layer{l}.ln2_bias"),
            &vector(&layer.ln2_bias),
        );
    }
    write_matrix(&mut out, "head.out", &w.head);
    out
}

fn take(map: &mut BTreeMap<String, Matrix>, name: &str, shape: (usize, usize)) -> Result<Matrix> {
    let m = map
        .remove(name)
        .ok_or_else(|| Error::parse(1, format!("missing matrix `{name}`")))?;
    if m.shape() != shape {
        return Err(Error::Shape {
            op: "checkpoint",
            left: shape,
            right: m.shape(),
        });
    }
    Ok(m)
}

fn take_vec(map: &mut BTreeMap<String, Matrix>, name: &str, len: usize) -> Result<Vec<f64>> {
    Ok(take(map, name, (1, len))?.into_data())
}

pub fn model_from_str(text: &str) -> Result<BaseWeights> {
    let doc = parse_document(text)?;
    let header = doc
        .header("CONFIG")
        .ok_or_else(|| Error::parse(1, "missing CONFIG line"))?;
    let config = parse_model_config(&parse_pairs(header)?)?;
    let mut map = doc.into_map();
    let (d, dff) = (config.d_model, config.d_ff);
    let token_embed = take(&mut map, "embed.token", (config.vocab_size, d))?;
    let pos_embed = take(&mut map, "embed.pos", (config.max_len, d))?;
    let mut layers = Vec::with_capacity(config.n_layers);
    for l in 1..=config.n_layers {
        let mut attention = Vec::with_capacity(4);
        for m in TargetModule::ALL {
            attention.push(take(&mut map, &format!("layer{l}.{m}"), (d, d))?);
        }
        let attention: [Matrix; 4] = attention.try_into().expect("four projections");
        layers.push(LayerWeights {
            attention,
            ffn_in: take(&mut map, &format!("layer{l}.ffn_in"), (d, dff))?,
            ffn_in_bias: take_vec(&mut map, &format!("layer{l}.ffn_in_bias"), dff)?,
            ffn_out: take(&mut map, &format!("layer{l}.ffn_out"), (dff, d))?,
            ffn_out_bias: take_vec(&mut map, &format!("layer{l}.ffn_out_bias"), d)?,
            ln1_gain: take_vec(&mut map, &format!("layer{l}.ln1_gain"), d)?,
            ln1_bias: take_vec(&mut map, &format!("layer{l}.ln1_bias"), d)?,
            ln2_gain: take_vec(&mut map, &format!("layer{l}.ln2_gain"), d)?,
            ln2_bias: take_vec(&mut map, &format!("layer{l}.ln2_bias"), d)?,
        });
    }
    let head = take(&mut map, "head.out", (d, config.n_outputs))?;
    Ok(BaseWeights {
        config,
        layers,
        token_embed,
        pos_embed,
        head,
    })
}

pub fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

pub fn spec_line(spec: &AdapterSpec) -> String {
    format!(
        "SPEC method={} r={} alpha={} modules={} layers={}",
        spec.method,
        spec.rank,
        spec.alpha,
        join(&spec.target_modules),
        join(&spec.target_layers)
    )
}

pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|x| !x.is_empty())
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad list item `{x}`")))
        })
        .collect()
}

pub fn parse_spec(line: &str) -> Result<AdapterSpec> {
    let pairs = parse_pairs(line)?;
    let method: Method = get_parsed(&pairs, "method")?;
    let rank: usize = get_parsed(&pairs, "r")?;
    let alpha: f64 = get_parsed(&pairs, "alpha")?;
    let modules: Vec<TargetModule> = parse_list(pairs.get("modules").map_or("", String::as_str))?;
    let layers: Vec<usize> = parse_list(pairs.get("layers").map_or("", String::as_str))?;
    Ok(AdapterSpec::new(method, rank, 0)
        .with_alpha(alpha)
        .with_modules(&modules)
        .with_layers(&layers))
}

pub fn adapter_to_string(spec: &AdapterSpec, params: &AdapterParams) -> String {
    let mut out = spec_line(spec);
    out.push('\n');
    for (name, t) in params.named_tensors() {
        write_matrix(&mut out, &name, t);
    }
    out
}

pub fn adapter_from_str(text: &str) -> Result<(AdapterSpec, AdapterParams)> {
    let doc = parse_document(text)?;
    let spec = parse_spec(
        doc.header("SPEC")
            .ok_or_else(|| Error::parse(1, "missing SPEC line"))?,
    )?;
    let mut map = doc.into_map();
    let r = spec.rank;
    let dim_of = |m: &Matrix, rank_axis_is_rows: bool| {
        if rank_axis_is_rows {
            m.cols()
        } else {
            m.rows()
        }
    };
    let params = match spec.method {
        Method::Lora => {
            let mut pairs = BTreeMap::new();
            for (m, l) in spec.targets() {
                let a_name = format!("lora.{m}.{l}.A");
                let d = map.get(&a_name).map(|a| dim_of(a, true)).unwrap_or(0);
                let a = take(&mut map, &a_name, (r, d))?;
                let b = take(&mut map, &format!("lora.{m}.{l}.B"), (d, r))?;
                pairs.insert((m, l), LoraPair { a, b });
            }
            AdapterParams::Lora(LoraParams { pairs })
        }
        Method::CondLora => {
            let mut thetas = BTreeMap::new();
            for &m in &spec.target_modules {
                let a_name = format!("cond.{m}.thetaA");
                let d = map.get(&a_name).map(|a| dim_of(a, false)).unwrap_or(0);
                let theta_a = take(&mut map, &a_name, (d, r))?;
                let theta_b = take(&mut map, &format!("cond.{m}.thetaB"), (d, r))?;
                thetas.insert(m, CondPair { theta_a, theta_b });
            }
            AdapterParams::CondLora(CondLoraParams { thetas })
        }
    };
    Ok((spec, params))
}

pub fn read_adapter(path: &Path) -> Result<(AdapterSpec, AdapterParams)> {
    adapter_from_str(&std::fs::read_to_string(path)?)
}

pub fn read_model(path: &Path) -> Result<BaseWeights> {
    model_from_str(&std::fs::read_to_string(path)?)
}
